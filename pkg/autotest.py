"""
Runs the static checkers and the qbm_lab self tests concurrently

    python autotest.py                 # every job
    python autotest.py mypy pylint     # skip the named jobs
    python autotest.py --full          # selftest also runs every experiment
"""

import sys
import time
import shlex
import subprocess
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor, as_completed

from typing import Dict, List, Sequence

SOURCES = "qbm_lab autotest.py genreadme.py setup.py"


class Color:
    __slots__ = ()
    red = "\033[91m"
    blue = "\033[94m"
    green = "\033[92m"
    reset = "\033[0m"


@dataclass(frozen=True)
class JobResult:
    name: str
    command: str
    output: str
    duration_ms: int
    returncode: int

    @property
    def ok(self) -> bool:
        return self.returncode == 0


def run_job(name: str, command: str) -> JobResult:
    start = time.monotonic_ns()
    proc = subprocess.run(shlex.split(command), capture_output=True, check=False)
    output = proc.stdout.decode("utf8", "replace") + proc.stderr.decode("utf8", "replace")

    return JobResult(
        name, command, output, (time.monotonic_ns() - start) // 1_000_000, proc.returncode
        )


def jobs(full: bool) -> Dict[str, str]:
    selftest = f"{sys.executable} -m qbm_lab validate" + " --full" * full

    return {
        "pyflakes": f"pyflakes {SOURCES}",
        # flags duplicate pyproject.toml so the job runs from any directory
        "mypy": f"mypy {SOURCES} --ignore-missing-imports --strict --warn-unreachable "
        "--python-version 3.10",
        "yapf": f"yapf -drp {SOURCES}",
        "pylint": "pylint ./qbm_lab -j2 --py-version=3.10",
        "pyright": "pyright",
        "selftest": selftest,
        }


def report(result: JobResult) -> None:
    color = Color.green if result.ok else Color.red
    print(f"{Color.blue}{result.command}{color} {result.duration_ms}ms{Color.reset}")
    if result.output:
        print(result.output, end="")


def main(argv: Sequence[str]) -> int:
    flags = {i for i in argv if i.startswith("--")}
    selected = {k: v for k, v in jobs("--full" in flags).items() if k not in argv}

    failed: List[str] = []

    with ThreadPoolExecutor(max_workers=len(selected) or 1) as pool:
        futures = [pool.submit(run_job, k, v) for k, v in selected.items()]
        for fut in as_completed(futures):
            result = fut.result()
            report(result)
            if not result.ok:
                failed.append(result.name)

    if failed:
        print(f"{Color.red}failed: {', '.join(sorted(failed))}{Color.reset}")
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
