"""Candidate models, their parametric uncertainty boxes, and realization.

Each model is a gain times a cascade of biquad sections

    g * prod_s (z^2 + b1 z + b2) / (z^2 + a1 z + a2)

Parameters are numbered across sections, so section ``s`` (0-based) owns
``b{2s+1}, b{2s+2}, a{2s+1}, a{2s+2}``.  An uncertainty spec maps parameter
names to relative half-widths; ``{"a6": 0.02}`` means ``a6 * (1 +/- 0.02)``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .sysalg import StateSpaceModel, frequency_response, parallel, spectral_radius

__all__ = [
    "Section",
    "TransferFunctionSpec",
    "UncertaintySpec",
    "ModelSet",
    "ModelFileError",
    "UnstableModelError",
    "StateSpaceModel",
    "parse_model_file",
    "load_model_set",
    "model_set_from_dict",
    "model_set_to_dict",
    "table1_path",
    "realize",
    "parameter_names",
    "sample_parameters",
    "sample_uncertainty",
    "delta_system",
    "FREQ_GRID_POINTS",
]

FREQ_GRID_POINTS = 1024
_SECTION_KEYS = ("b1", "b2", "a1", "a2")


class ModelFileError(ValueError):
    pass


class UnstableModelError(ValueError):
    """A model (or sampled model) has a pole on or outside the unit circle."""

    def __init__(self, message, parameters=None):
        super().__init__(message)
        self.parameters = parameters or {}


@dataclass(frozen=True)
class Section:
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def trivial(self):
        return self.b1 == self.b2 == self.a1 == self.a2 == 0.0

    def poles(self):
        return np.roots([1.0, self.a1, self.a2])


@dataclass(frozen=True)
class TransferFunctionSpec:
    gain: float
    sections: tuple
    sample_rate: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))
        if not self.sections:
            raise ModelFileError("a transfer function needs at least one section")

    def unstable_sections(self):
        return [s for s, sec in enumerate(self.sections)
                if np.any(np.abs(sec.poles()) >= 1.0)]

    def params(self):
        """Flat parameter dictionary, ``g`` plus the numbered coefficients."""
        out = {"g": self.gain}
        for s, sec in enumerate(self.sections):
            for key in _SECTION_KEYS:
                out[f"{key[0]}{2 * s + int(key[1])}"] = getattr(sec, key)
        return out

    def with_params(self, values):
        """Copy with the parameters in ``values`` replaced."""
        sections = []
        for s, sec in enumerate(self.sections):
            kw = {}
            for key in _SECTION_KEYS:
                name = f"{key[0]}{2 * s + int(key[1])}"
                if name in values:
                    kw[key] = float(values[name])
            sections.append(replace(sec, **kw))
        return TransferFunctionSpec(float(values.get("g", self.gain)), sections,
                                    self.sample_rate)

    def evaluate(self, omega):
        """Frequency response from the biquad product."""
        z = np.exp(1j * np.asarray(omega, dtype=float))
        H = np.full(z.shape, self.gain, dtype=complex)
        for sec in self.sections:
            H *= (z**2 + sec.b1 * z + sec.b2) / (z**2 + sec.a1 * z + sec.a2)
        return H


@dataclass(frozen=True)
class UncertaintySpec:
    half_widths: dict = field(default_factory=dict)
    structure: str = "parametric-interval"

    def __post_init__(self):
        if any(v < 0 for v in self.half_widths.values()):
            raise ModelFileError("uncertainty half-widths must be non-negative")

    @property
    def exact(self):
        return all(v == 0 for v in self.half_widths.values())

    def scaled(self, factor):
        return UncertaintySpec({k: v * factor for k, v in self.half_widths.items()},
                               self.structure)


@dataclass(frozen=True)
class ModelSet:
    """Nominal model (index 0) and ``n >= 1`` fault models."""

    labels: tuple
    tfs: tuple
    uncertainty: tuple
    T_minus: int = 32
    T_plus: int = 32
    sample_rate: float = 1.0

    def __post_init__(self):
        for name in ("labels", "tfs", "uncertainty"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not len(self.labels) == len(self.tfs) == len(self.uncertainty):
            raise ModelFileError("labels, models and uncertainty specs differ in length")
        if len(self.tfs) < 2:
            raise ModelFileError("need at least one fault model")
        if self.T_minus <= 0 or self.T_plus <= 0:
            raise ModelFileError("window lengths must be positive")
        for label, tf in zip(self.labels, self.tfs):
            bad = tf.unstable_sections()
            if bad:
                raise UnstableModelError(
                    f"model {label!r}: section(s) {bad} have poles on or outside "
                    "the unit circle", tf.params())

    @property
    def n_faults(self):
        return len(self.tfs) - 1

    @property
    def indices(self):
        return range(len(self.tfs))

    def nominal_models(self):
        return [realize(tf) for tf in self.tfs]

    def with_uncertainty_scaled(self, factor):
        """Copy with every relative half-width multiplied by ``factor``."""
        return replace(self, uncertainty=[u.scaled(factor) for u in self.uncertainty])

    def with_models(self, indices):
        """Sub-set of the models, in the given order."""
        return replace(self, labels=[self.labels[k] for k in indices],
                       tfs=[self.tfs[k] for k in indices],
                       uncertainty=[self.uncertainty[k] for k in indices])


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def table1_path():
    """Path of the bundled four-model example set."""
    return Path(str(resources.files("afd") / "data" / "table1.json"))


def model_set_from_dict(data):
    try:
        sample_rate = float(data.get("sample_rate_hz", 1.0))
        T_minus, T_plus = int(data["t_minus"]), int(data["t_plus"])
        labels, tfs, unc = [], [], []
        for entry in data["models"]:
            sections = [Section(*(float(s[k]) for k in _SECTION_KEYS))
                        for s in entry["sections"]]
            tf = TransferFunctionSpec(float(entry["gain"]), sections, sample_rate)
            known = set(tf.params())
            hw = {str(k): float(v) for k, v in entry.get("uncertainty", {}).items()}
            unknown = set(hw) - known
            if unknown:
                raise ModelFileError(
                    f"model {entry['label']!r}: unknown uncertain parameter(s) "
                    f"{sorted(unknown)}")
            labels.append(str(entry["label"]))
            tfs.append(tf)
            unc.append(UncertaintySpec(hw))
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc!r}") from exc
    return ModelSet(labels, tfs, unc, T_minus, T_plus, sample_rate)


def model_set_to_dict(ms):
    models = []
    for label, tf, unc in zip(ms.labels, ms.tfs, ms.uncertainty):
        models.append({
            "label": label,
            "gain": tf.gain,
            "sections": [{k: getattr(s, k) for k in _SECTION_KEYS} for s in tf.sections],
            "uncertainty": dict(unc.half_widths),
        })
    return {"sample_rate_hz": ms.sample_rate, "t_minus": ms.T_minus,
            "t_plus": ms.T_plus, "models": models}


def parse_model_file(path):
    """Read and validate a JSON model file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ModelFileError(f"{path}: top level must be an object")
    return model_set_from_dict(data)


load_model_set = parse_model_file


# --------------------------------------------------------------------------
# Realization
# --------------------------------------------------------------------------

def _section_ss(sec):
    # (z^2 + b1 z + b2)/(z^2 + a1 z + a2) = 1 + ((b1-a1) z + (b2-a2))/(z^2 + a1 z + a2)
    A = np.array([[-sec.a1, -sec.a2], [1.0, 0.0]])
    B = np.array([[1.0], [0.0]])
    C = np.array([[sec.b1 - sec.a1, sec.b2 - sec.a2]])
    return A, B, C, np.array([[1.0]])


def realize(tf):
    """Cascade of controllable-canonical biquads, gain applied at the output.

    Sections with all-zero coefficients are the identity and add no state.
    """
    A = np.zeros((0, 0))
    B = np.zeros((0, 1))
    C = np.zeros((1, 0))
    D = np.ones((1, 1))
    for sec in tf.sections:
        if sec.trivial:
            continue
        As, Bs, Cs, Ds = _section_ss(sec)
        n = A.shape[0]
        A = np.block([[A, np.zeros((n, 2))], [Bs @ C, As]])
        B = np.vstack([B, Bs @ D])
        C = np.hstack([Ds @ C, Cs])
        D = Ds @ D
    return StateSpaceModel(A, B, tf.gain * C, tf.gain * D)


# --------------------------------------------------------------------------
# Uncertainty sampling
# --------------------------------------------------------------------------

def parameter_names(ms, i):
    """Uncertain parameters of model ``i`` (non-zero half-width), in the
    canonical order ``g, b1, b2, a1, a2, b3, ...``.  Bit ``k`` of a vertex
    code selects the upper end of parameter ``k``."""
    hw = ms.uncertainty[i].half_widths
    return [name for name in ms.tfs[i].params() if hw.get(name, 0.0) > 0]


def _vertex_params(ms, i, code):
    nominal = ms.tfs[i].params()
    hw = ms.uncertainty[i].half_widths
    values = dict(nominal)
    for bit, name in enumerate(parameter_names(ms, i)):
        sign = 1.0 if (code >> bit) & 1 else -1.0
        values[name] = nominal[name] * (1.0 + sign * hw[name])
    return values


def sample_parameters(ms, i, mode="nominal", seed=None, code=None, max_tries=1000):
    """Parameter dictionary for one draw of model ``i``.

    ``mode`` is ``"nominal"``, ``"random"`` (uniform in the box, unstable
    draws are redrawn), ``"vertex"`` (corner ``code``) or ``"worst_case"``
    (see :func:`worst_case_vertex`).
    """
    if i not in ms.indices:
        raise IndexError(f"model index {i} outside 0..{len(ms.tfs) - 1}")
    nominal = ms.tfs[i].params()
    if mode == "nominal":
        values = dict(nominal)
    elif mode == "vertex":
        values = _vertex_params(ms, i, int(code or 0))
    elif mode == "worst_case":
        values = _vertex_params(ms, i, worst_case_vertex(ms, i)[0])
    elif mode == "random":
        rng = np.random.default_rng(seed)
        hw = ms.uncertainty[i].half_widths
        names = parameter_names(ms, i)
        for _ in range(max_tries):
            draw = rng.uniform(-1.0, 1.0, size=len(names))
            values = dict(nominal)
            for name, d in zip(names, draw):
                values[name] = nominal[name] * (1.0 + d * hw[name])
            if not ms.tfs[i].with_params(values).unstable_sections():
                break
        else:
            raise UnstableModelError(
                f"model {ms.labels[i]!r}: no stable draw in {max_tries} tries", values)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    tf = ms.tfs[i].with_params(values)
    if tf.unstable_sections():
        raise UnstableModelError(
            f"model {ms.labels[i]!r}: sampled parameters give an unstable model",
            values)
    return values


def sample_uncertainty(ms, i, mode="nominal", seed=None, code=None):
    """Realization of one member of model ``i``'s uncertainty box."""
    values = sample_parameters(ms, i, mode, seed=seed, code=code)
    return realize(ms.tfs[i].with_params(values))


def _grid():
    return np.linspace(0.0, np.pi, FREQ_GRID_POINTS)


def worst_case_vertex(ms, i):
    """Stable box vertex maximizing ``max_w |G_theta - G_i|`` on the grid.

    Returns ``(code, value, skipped)`` where ``skipped`` lists the vertex
    codes rejected as unstable.  Ties keep the lowest code.
    """
    omega = _grid()
    H0 = ms.tfs[i].evaluate(omega)
    best, best_val, skipped = 0, -1.0, []
    for code in range(2 ** len(parameter_names(ms, i))):
        tf = ms.tfs[i].with_params(_vertex_params(ms, i, code))
        if tf.unstable_sections():
            skipped.append(code)
            continue
        val = float(np.max(np.abs(tf.evaluate(omega) - H0)))
        if val > best_val:
            best, best_val = code, val
    if best_val < 0:
        raise UnstableModelError(f"model {ms.labels[i]!r}: every box vertex is unstable")
    return best, best_val, skipped


def vertices(ms, i):
    """All vertex codes of model ``i`` with their stability flag."""
    out = []
    for code in range(2 ** len(parameter_names(ms, i))):
        tf = ms.tfs[i].with_params(_vertex_params(ms, i, code))
        out.append((code, not tf.unstable_sections()))
    return out


def linf_grid_norm(g, h=None):
    """Grid estimate of ``||g - h||_inf`` (``||g||_inf`` without ``h``)."""
    omega = _grid()
    G = frequency_response(g, omega)
    if h is not None:
        G = G - frequency_response(h, omega)
    return float(np.max(np.abs(G)))


def delta_system(nominal, perturbed):
    """Additive perturbation ``perturbed - nominal`` as a parallel connection."""
    if (nominal.m, nominal.p) != (perturbed.m, perturbed.p):
        raise ValueError("delta_system: input/output dimensions differ")
    return parallel(perturbed, -nominal)
