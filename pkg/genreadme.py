"""
README generation tool that allows examples to be typechecked and named experiments to be
autodocumented
"""

import inspect
from typing import Callable, Protocol, Iterator

# pylint: disable=import-outside-toplevel


class Examples:
    """
    Class containing examples
    """
    @staticmethod
    def free_decoherence_example() -> None:
        """
        Evolves a cat state under free decoherence and reads its coherence
        """

        from qbm_lab import Ok, Err, Grid1D, superposition_state, evolve_free_decoherence

        grid = Grid1D.centered(16.0, 128)
        rho0 = superposition_state(grid, [-2.0, 2.0], width=0.5)

        # evolvers return a Result[DensityMatrix, QbmError] instead of raising:
        #  is_instance will TypeGuard the result to the variant
        #  unwrap returns the requested variant or raises an UnwrapError
        if Ok.is_instance(res := evolve_free_decoherence(rho0, 0.05, 1.0, 0.01, M=20.0)):
            rho = Ok.unwrap(res)
            i, j = 72, 56  # x = +2 and x = -2
            print(abs(rho.rho[i, j]) / abs(rho0.rho[i, j]))  # -> about exp(-0.05 * 16)
        else:
            raise Err.unwrap(res)  # LeakageError, StepTooLarge or InvalidParams

    @staticmethod
    def wigner_example() -> None:
        """
        Transforms a Gaussian state to phase space and takes its momentum moments
        """

        from qbm_lab import Ok, Grid1D, gaussian_state, wigner_transform, wigner_moments

        rho = gaussian_state(Grid1D.centered(16.0, 128), width=1.0, momentum=1.5)

        # Ok.expect unwraps, or raises the carried domain error itself (here NonHermitian)
        w = Ok.expect(wigner_transform(rho))
        moments = wigner_moments(w)
        print(moments.mean_P, moments.var_P)  # -> 1.5 0.25

    @staticmethod
    def experiment_example() -> None:
        """
        Runs a named experiment with one override and inspects its checks
        """

        from qbm_lab import Ok, Err, configure, run

        cfg = configure("decoherence-rate", overrides=["physics.T=2"], output_dir="out")

        if (manifest := Ok.get(res := Ok.and_then(cfg, run))) is not None:
            for check in manifest.checks:
                print(check.name, check.passed, check.value, check.tolerance)
        else:
            print(f"Err: {Err.unwrap(res)}")

    @staticmethod
    def register_example() -> None:
        """
        Uses register to add a small experiment of your own
        """
        from qbm_lab import Ok, QbmError, Result, RunContext, gaussian_state, purity, register

        @register(name="purity-check", defaults={"purity-check": {"width": 1.0}})
        def purity_check( # pyright: ignore[reportUnusedFunction]
            ctx: RunContext
            ) -> Result[None, QbmError]:  # ('ok', None) | ('err', QbmError)
            """
            A pure Gaussian has purity one
            """
            cfg = ctx.config
            rho = gaussian_state(cfg.grid, width=cfg.get_float("width"))
            ctx.check("purity_gap", abs(purity(rho) - 1), 1e-12)
            return Ok(None)


def wrap(f: Callable[..., None], /) -> str:
    source = "\n".join([i[8:].rstrip("\n") for i in inspect.getsourcelines(f)[0][2:]])
    return f"```py\n{source}\n```\n"


class StringWriter(Protocol):
    def write(self, data: str, /) -> int:
        ...


def experiment_table(names: Iterator[str], summaries: Iterator[str], output: StringWriter) -> None:

    output.write("| Experiment | What it checks |\n")
    output.write("| --- | --- |\n")

    for name, summary in zip(names, summaries):
        output.write(f"| `{name}` | {summary} |\n")


TITLE = "qbm_lab"
DESCRIPTION = (
    "A numerical lab for quantum Brownian motion: density matrix evolvers for the free "
    "decoherence, Caldeira-Leggett and Lindblad equations, Wigner function evolution under the "
    "Boltzmann and Fokker-Planck collision operators, a collision Monte Carlo, and the "
    "decoherence kernel of a particle in a thermal gas\n"
    )
ERRORS_CLAUSE = (
    "## Errors are values\n"
    "Fallible qbm\\_lab operations (evolvers, quadratures, config parsing) do not raise; they "
    "return a `Result` tagged tuple holding the value or a `QbmError`. Constructors raise only "
    "on programmer errors. Run a typechecker over code that uses it\n"
    )
CLI = (
    "## Command line\n"
    "```sh\n"
    "qbm list\n"
    "qbm decoherence-rate --config run.ini --set physics.T=2 --out runs/t2\n"
    "qbm validate            # registered self tests\n"
    "qbm validate --full     # plus every experiment with its defaults\n"
    "```\n"
    "Config files are INI with sections `[physics]`, `[grid]`, `[potential]`, `[gas]`, "
    "`[run]` and one named after the experiment; `--set section.key=value` overrides them. "
    "Every run writes its csv outputs and a `manifest.json` listing each checked invariant, "
    "and exits 1 if one failed. `QBM_THREADS` caps worker threads (0 or unset: all cores).\n"
    )


def main() -> None:
    import qbm_lab

    with open("README.md", "w") as fp:

        fname = __file__.rsplit("/", maxsplit=1)[-1]

        fp.write(
            f"<!--\n WARNING: This file is automatically generated by {fname}\n"
            f" To edit this file, make changes to {fname} instead\n-->\n"
            )

        fp.write(f"# {TITLE} {qbm_lab.__version__}\n")
        fp.write(DESCRIPTION)
        fp.write(ERRORS_CLAUSE)
        fp.write(CLI)

        fp.write(
            "## Usage\nSome basic usage. These examples "
            "are all runnable and meet typing standards.\n"
            )

        fp.write("### Free decoherence of a cat state\n")
        fp.write(wrap(Examples.free_decoherence_example))

        fp.write("### Phase space\n")
        fp.write(wrap(Examples.wigner_example))

        fp.write("### Running an experiment from python\n")
        fp.write(wrap(Examples.experiment_example))

        fp.write("### Writing an experiment\n")
        fp.write(wrap(Examples.register_example))

        from qbm_lab import experiments

        fp.write("## Named experiments\n")
        fp.write("Each of these is a `qbm` subcommand:\n")
        experiment_table(
            (i.name for i in experiments()), (i.summary for i in experiments()), fp
            )


if __name__ == "__main__":
    main()
