"""Multi-species chemotaxis: mass/coupling conditions, free-space solver, diagnostics."""

from .fields import GridSpec, KernelTable, ScalarField2D, VectorField2D, build_kernel, poisson_solve
from .species import CouplingModel, Verdict, subcritical_check
from .dynamics import Mode, RunOutcome, SimState, Status, StepperConfig, run
from .diagnostics import DiagnosticsRecord, slope_fit, decay_fit
from .scenarios import GaussianBlob, ScenarioConfig, build_initial, preset

__version__ = "0.1.0"
