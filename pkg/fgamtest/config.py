"""Run-time defaults with environment-variable overrides."""

import os
from dataclasses import dataclass
from typing import Optional

from .enums import QuadratureRule
from .lmm import MAX_ITERATIONS, FitOptions

DEFAULT_KX = 10
DEFAULT_KT = 10
DEFAULT_DEGREE = 3
DEFAULT_PENALTY_ORDER = 2
DEFAULT_NSIM = 10000
DEFAULT_INTERACTIVE_NSIM = 2000
DEFAULT_NBOOT = 500
DEFAULT_SEED = 20140301
DEFAULT_THREADS = 1
DEFAULT_QUADRATURE = QuadratureRule.TRAPEZOID
DEFAULT_SURFACE_GRID = 51
DEFAULT_MAX_ITER = MAX_ITERATIONS

ENV_KX = "FGAM_KX"
ENV_KT = "FGAM_KT"
ENV_NSIM = "FGAM_NSIM"
ENV_SEED = "FGAM_SEED"
ENV_THREADS = "FGAM_THREADS"
ENV_QUADRATURE = "FGAM_QUADRATURE"
ENV_MAX_ITER = "FGAM_MAX_ITER"


def _parse_env_int(env_var: str, default: int) -> int:
    """Parse an environment variable as int.

    Args:
        env_var: Environment variable name.
        default: Default value to use when missing/invalid.

    Returns:
        Parsed int value.
    """
    raw = os.getenv(env_var)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _parse_env_quadrature(env_var: str, default: QuadratureRule) -> QuadratureRule:
    """Parse an environment variable as a quadrature rule name.

    Args:
        env_var: Environment variable name.
        default: Rule to use when missing/unknown.

    Returns:
        Parsed quadrature rule.
    """
    raw = os.getenv(env_var)
    if raw is None or raw == "":
        return default
    try:
        return QuadratureRule(raw.strip().lower())
    except ValueError:
        return default


@dataclass(frozen=True)
class Settings:
    """Defaults shared by the library entry points and the CLI.

    Attributes:
        kx: Number of B-spline basis functions on the x axis.
        kt: Number of B-spline basis functions on the t axis.
        nsim: Null-distribution draws for reported p-values.
        seed: Master seed used when none is given.
        threads: Worker count for Monte Carlo loops.
        quadrature: Quadrature rule along each curve.
        max_iter: Nelder-Mead iteration cap per start for variance fits.
    """

    kx: int = DEFAULT_KX
    kt: int = DEFAULT_KT
    nsim: int = DEFAULT_NSIM
    seed: int = DEFAULT_SEED
    threads: int = DEFAULT_THREADS
    quadrature: QuadratureRule = DEFAULT_QUADRATURE
    max_iter: int = DEFAULT_MAX_ITER

    def fit_options(self) -> FitOptions:
        """Optimizer controls for the mixed-model fitters."""
        return FitOptions(max_iter=self.max_iter)

    @classmethod
    def from_env(
        cls, *, load_dotenv: bool = False, dotenv_path: Optional[str] = None
    ) -> "Settings":
        """Build settings from `FGAM_*` environment variables.

        Args:
            load_dotenv: If True, load a `.env` file with `python-dotenv` first.
                Opt-in to avoid import-time side effects.
            dotenv_path: Explicit `.env` location; searched upwards when None.

        Returns:
            Settings with every unset or invalid variable at its default.
        """
        if load_dotenv:
            try:
                from dotenv import load_dotenv as _load_dotenv
            except ImportError as e:  # pragma: no cover
                raise ImportError(
                    "python-dotenv is required to use load_dotenv=True"
                ) from e
            _load_dotenv(dotenv_path=dotenv_path)

        return cls(
            kx=_parse_env_int(ENV_KX, DEFAULT_KX),
            kt=_parse_env_int(ENV_KT, DEFAULT_KT),
            nsim=_parse_env_int(ENV_NSIM, DEFAULT_NSIM),
            seed=_parse_env_int(ENV_SEED, DEFAULT_SEED),
            threads=max(1, _parse_env_int(ENV_THREADS, DEFAULT_THREADS)),
            quadrature=_parse_env_quadrature(ENV_QUADRATURE, DEFAULT_QUADRATURE),
            max_iter=max(1, _parse_env_int(ENV_MAX_ITER, DEFAULT_MAX_ITER)),
        )
