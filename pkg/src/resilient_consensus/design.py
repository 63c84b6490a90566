"""Inter-layer matrix design, Lyapunov certificates and parameter checks.

The bundle produced here is everything the triggers and the integrator need:
the four layer matrices, the leader-input vectors, the diagonal Lyapunov
matrices and the derived quadratic-form matrices with their smallest
eigenvalues.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .topology import hurwitz_check

COUPLING_TOL = 1e-10
PSD_TOL = 1e-9
SKEW_TOL = 1e-10
OMEGA_BOUNDS = ("px", "pzg")


class DesignError(ValueError):
    """Raised when a matrix construction is inapplicable or uncertified."""


def frob2(M) -> float:
    """Squared Frobenius norm."""
    return float(np.sum(np.asarray(M, dtype=float) ** 2))


def lyapunov_diag(M) -> np.ndarray:
    """Diagonal Lyapunov matrix for a Hurwitz M-matrix-type system.

    With ``zeta = M^-1 1`` and ``chi = M^-T 1`` the candidate is
    ``diag(chi_i / zeta_i)``. The result is only returned if every ratio is
    positive and ``M^T P + P M`` is negative semidefinite (up to ``PSD_TOL``).
    """
    M = np.asarray(M, dtype=float)
    ok, abscissa = hurwitz_check(M)
    if not ok:
        raise DesignError(f"matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")
    ones = np.ones(M.shape[0])
    try:
        zeta = np.linalg.solve(M, ones)
        chi = np.linalg.solve(M.T, ones)
    except np.linalg.LinAlgError as exc:
        raise DesignError(f"matrix is singular: {exc}") from exc
    ratio = chi / zeta
    if np.any(~np.isfinite(ratio)) or np.any(ratio <= 0):
        bad = [i + 1 for i, r in enumerate(ratio) if not r > 0]
        raise DesignError(f"diagonal construction inapplicable, non-positive ratio at nodes {bad}")
    P = np.diag(ratio)
    top = float(np.max(np.linalg.eigvalsh(M.T @ P + P @ M)))
    if top > PSD_TOL:
        raise DesignError(f"M^T P + P M is not negative semidefinite (lambda_max = {top:.3e})")
    return P


def sym_lambda_min(M) -> float:
    """Smallest eigenvalue via the symmetric solver, symmetrising if needed."""
    M = np.asarray(M, dtype=float)
    skew = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if skew > SKEW_TOL:
        warnings.warn(f"symmetrising matrix with skew part {skew:.3e}", RuntimeWarning, stacklevel=2)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def q_matrix(P, M) -> tuple[np.ndarray, float]:
    """Return ``Q = -(P M + M^T P)`` and its smallest eigenvalue."""
    P = np.asarray(P, dtype=float)
    M = np.asarray(M, dtype=float)
    if not np.allclose(P, np.diag(np.diag(P))) or np.any(np.diag(P) <= 0):
        raise DesignError("P must be diagonal positive definite")
    Q = -(P @ M + M.T @ P)
    lam = sym_lambda_min(Q)
    if lam < -PSD_TOL:
        raise DesignError(f"P is not a Lyapunov certificate for M (lambda_min(Q) = {lam:.3e})")
    return 0.5 * (Q + Q.T), lam


@dataclass(frozen=True)
class LayerDesign:
    """Matrix bundle for the two-layer system at a given inter-layer gain."""

    A: np.ndarray
    H: np.ndarray
    K: np.ndarray
    G: np.ndarray
    B: np.ndarray
    D: np.ndarray
    Px: np.ndarray
    Pz: np.ndarray
    Qx: np.ndarray
    Qz: np.ndarray
    lambda_min_Qx: float
    lambda_min_Qz: float
    beta: float
    norms: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.beta >= 0:
            raise DesignError(f"beta must be non-negative, got {self.beta}")
        for name in ("A", "H", "K", "G", "B", "D", "Px", "Pz", "Qx", "Qz"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        # always recomputed: a dataclasses.replace() copy must not share the cache
        object.__setattr__(self, "norms", {
            "px2": frob2(self.Px),
            "pz2": frob2(self.Pz),
            "pxk2": frob2(self.Px @ self.K),
            "pzg2": frob2(self.Pz @ self.G),
        })

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def px_norm2(self) -> float:
        return self.norms["px2"]

    @property
    def pxk_norm2(self) -> float:
        return self.norms["pxk2"]

    @property
    def pzg_norm2(self) -> float:
        return self.norms["pzg2"]

    def with_beta(self, beta: float) -> "LayerDesign":
        return replace(self, beta=float(beta))


def build_design(A, B, H=None, K=None, G=None, beta: float = 1.0) -> LayerDesign:
    """Assemble a design, defaulting to ``H = K = G = A``.

    When only one of ``K`` and ``G`` is supplied the other is completed from
    ``K^T Px = Pz G``. ``D`` is always ``G 1``.
    """
    A = np.array(A, dtype=float)
    B = np.array(B, dtype=float)
    H = A.copy() if H is None else np.array(H, dtype=float)
    Px = lyapunov_diag(A)
    Pz = lyapunov_diag(H)
    if K is None and G is None:
        K = A.copy()
        G = A.copy()
    elif G is None:
        K = np.array(K, dtype=float)
        G = np.linalg.solve(Pz, K.T @ Px)
    elif K is None:
        G = np.array(G, dtype=float)
        K = (Pz @ G @ np.linalg.inv(Px)).T
    else:
        K = np.array(K, dtype=float)
        G = np.array(G, dtype=float)
    n = A.shape[0]
    for name, M in (("H", H), ("K", K), ("G", G)):
        if M.shape != (n, n):
            raise DesignError(f"{name} has shape {M.shape}, expected {(n, n)}")
    Qx, lam_x = q_matrix(Px, A)
    Qz, lam_z = q_matrix(Pz, H)
    D = G @ np.ones(n)
    return LayerDesign(A, H, K, G, B, D, Px, Pz, Qx, Qz, lam_x, lam_z, float(beta))


@dataclass
class Check:
    name: str
    passed: bool
    value: Optional[float] = None
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        val = "" if self.value is None else f" [{self.value:.6g}]"
        return f"{mark}  {self.name}{val}  {self.detail}".rstrip()


@dataclass
class ValidationReport:
    title: str
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, value=None, detail="") -> Check:
        chk = Check(name, bool(passed), None if value is None else float(value), detail)
        self.checks.append(chk)
        return chk

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def format(self) -> str:
        head = f"{self.title}: {'PASS' if self.ok else 'FAIL'}"
        return "\n".join([head] + ["  " + c.line() for c in self.checks])

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": c.value, "detail": c.detail} for c in self.checks
            ],
        }


def coupling_validate(design: LayerDesign) -> ValidationReport:
    """Residuals of ``K^T Px = Pz G`` and ``D = G 1`` (max entrywise)."""
    rep = ValidationReport("coupling")
    r1 = float(np.max(np.abs(design.K.T @ design.Px - design.Pz @ design.G)))
    r2 = float(np.max(np.abs(design.D - design.G @ np.ones(design.n))))
    rep.add("K^T Px = Pz G", r1 <= COUPLING_TOL, r1, "max entrywise residual")
    rep.add("D = G 1", r2 <= COUPLING_TOL, r2, "max entrywise residual")
    return rep


def matrices_validate(design: LayerDesign) -> ValidationReport:
    """Hurwitz/invertibility of every layer matrix plus the Lyapunov certificates."""
    rep = ValidationReport("matrices")
    for name in ("A", "H", "K", "G"):
        M = getattr(design, name)
        ok, abscissa = hurwitz_check(M)
        rep.add(f"{name} Hurwitz", ok, abscissa, "spectral abscissa")
    for name in ("K", "G"):
        smin = float(np.linalg.svd(getattr(design, name), compute_uv=False)[-1])
        rep.add(f"{name} invertible", smin > 1e-12, smin, "smallest singular value")
    for pname, mname in (("Px", "A"), ("Pz", "H")):
        P = getattr(design, pname)
        M = getattr(design, mname)
        top = float(np.max(np.linalg.eigvalsh(M.T @ P + P @ M)))
        rep.add(f"{mname}^T {pname} + {pname} {mname} <= 0", top <= PSD_TOL, top, "lambda_max")
    rep.add("lambda_min(Qx) >= 0", design.lambda_min_Qx >= -PSD_TOL, design.lambda_min_Qx)
    rep.add("lambda_min(Qz) >= 0", design.lambda_min_Qz >= -PSD_TOL, design.lambda_min_Qz)
    ok, smin = equilibrium_unique(design)
    rep.add("origin is the unique equilibrium", ok, smin, "smallest singular value of the 2N x 2N block")
    return rep


def equilibrium_unique(design: LayerDesign, tol: float = 1e-12) -> tuple[bool, float]:
    """Check the attack-free error system has a trivial null space."""
    b = design.beta
    block = np.block([[design.A, b * design.K], [-b * design.G, design.H]])
    smin = float(np.linalg.svd(block, compute_uv=False)[-1])
    return smin > tol, smin


@dataclass(frozen=True)
class TriggerParams:
    """Scalar design constants of both triggering mechanisms.

    ``kappa`` is only used by the single state-based condition and may be
    left as ``None`` for layer-wise dynamic runs.
    """

    c1: float
    c2: float
    c3: float
    epsilon: float
    mu: float
    d_bar: float
    sigma1: float = 1.0
    sigma2: float = 1.0
    kappa: Optional[float] = None
    eta0: float = 0.0
    nu0: float = 0.0
    omega_bound: str = "px"

    def __post_init__(self):
        if self.omega_bound not in OMEGA_BOUNDS:
            raise ValueError(f"omega_bound must be one of {OMEGA_BOUNDS}, got {self.omega_bound!r}")

    def attack_term(self, design: LayerDesign) -> float:
        """The attack penalty ``(||Px||^2 / c3) D_bar^2`` (or the ``||Pz G||^2`` variant)."""
        norm2 = design.px_norm2 if self.omega_bound == "px" else design.pzg_norm2
        return norm2 / self.c3 * self.d_bar**2

    def single_attack_term(self, design: LayerDesign) -> float:
        return design.px_norm2 / self.c3 * self.d_bar**2

    def omega(self, design: LayerDesign) -> float:
        return self.epsilon - self.attack_term(design)

    def to_dict(self) -> dict:
        return {
            "c1": self.c1, "c2": self.c2, "c3": self.c3, "epsilon": self.epsilon, "mu": self.mu,
            "d_bar": self.d_bar, "sigma1": self.sigma1, "sigma2": self.sigma2, "kappa": self.kappa,
            "eta0": self.eta0, "nu0": self.nu0, "omega_bound": self.omega_bound,
        }


def c_constants_for(lambda_min_qx: float, lambda_min_qz: float, beta: float) -> tuple[float, float, float]:
    if not beta > 0:
        raise DesignError("default c-constants need beta > 0")
    return 0.25 * lambda_min_qx / beta, 0.5 * lambda_min_qz / beta, 0.25 * lambda_min_qx


def default_c_constants(design: LayerDesign) -> tuple[float, float, float]:
    """``(c1, c2, c3)`` placed at a fixed fraction inside the admissible intervals."""
    return c_constants_for(design.lambda_min_Qx, design.lambda_min_Qz, design.beta)


def params_validate(params: TriggerParams, design: LayerDesign, require_kappa: bool = False) -> ValidationReport:
    """Check every scalar inequality; each check carries its slack."""
    rep = ValidationReport("trigger parameters")
    b = design.beta
    for name in ("c1", "c2", "c3", "epsilon", "mu", "sigma1", "sigma2"):
        v = getattr(params, name)
        rep.add(f"{name} > 0", v > 0, v)
    rep.add("d_bar >= 0", params.d_bar >= 0, params.d_bar)
    rep.add("eta0 >= 0", params.eta0 >= 0, params.eta0)
    rep.add("nu0 >= 0", params.nu0 >= 0, params.nu0)
    rep.add("beta > 0", b > 0, b)
    if params.kappa is not None or require_kappa:
        k = params.kappa
        ok = k is not None and 0 < k < 1
        rep.add("kappa in (0, 1)", ok, None if k is None else min(k, 1 - k), "" if k is not None else "missing")
    lx = design.lambda_min_Qx
    lz = design.lambda_min_Qz
    s = params.c3 + params.c1 * b
    rep.add("c3 + c1*beta in (0, lambda_min(Qx))", 0 < s < lx, min(s, lx - s), f"c3 + c1*beta = {s:.6g}, lambda_min(Qx) = {lx:.6g}")
    s = params.c2 * b
    rep.add("c2*beta in (0, lambda_min(Qz))", 0 < s < lz, min(s, lz - s), f"c2*beta = {s:.6g}, lambda_min(Qz) = {lz:.6g}")
    if params.c3 > 0:
        slack = params.epsilon - params.single_attack_term(design)
        rep.add("epsilon > ||Px||^2 D_bar^2 / c3", slack > 0, slack)
        if params.omega_bound == "pzg":
            slack = params.epsilon - params.attack_term(design)
            rep.add("epsilon > ||Pz G||^2 D_bar^2 / c3", slack > 0, slack)
        om = params.omega(design)
        rep.add("Omega > 0", om > 0, om)
    return rep


def design_report(design: LayerDesign, params: Optional[TriggerParams] = None, reference: Optional[dict] = None) -> dict:
    """Every validation of a resolved design, plus comparisons to reference values."""
    reports = [matrices_validate(design), coupling_validate(design)]
    if params is not None:
        reports.append(params_validate(params, design))
    notes = []
    if np.array_equal(design.H, design.A) and np.array_equal(design.Pz, design.Px):
        notes.append("H = A and Pz = Px, so Qz = Qx and both smallest eigenvalues coincide")
    for key, computed in (("lambda_min_Qx", design.lambda_min_Qx), ("lambda_min_Qz", design.lambda_min_Qz)):
        if reference and key in reference:
            ref = float(reference[key])
            if abs(ref - computed) > 1e-4:
                notes.append(f"{key}: computed {computed:.5f} differs from reference {ref:.5f}")
    out = {
        "beta": design.beta,
        "lambda_min_Qx": design.lambda_min_Qx,
        "lambda_min_Qz": design.lambda_min_Qz,
        "norms": dict(design.norms),
        "matrices": {k: np.asarray(getattr(design, k)).tolist() for k in ("A", "H", "K", "G", "B", "D", "Px", "Pz")},
        "reports": [r.to_dict() for r in reports],
        "ok": all(r.ok for r in reports),
        "notes": notes,
    }
    if params is not None:
        out["omega"] = params.omega(design)
    return out


def format_design_report(report: dict) -> str:
    lines = [f"beta = {report['beta']:g}"]
    lines.append(f"lambda_min(Qx) = {report['lambda_min_Qx']:.6f}")
    lines.append(f"lambda_min(Qz) = {report['lambda_min_Qz']:.6f}")
    n = report["norms"]
    lines.append(f"||Px||^2 = {n['px2']:.6g}  ||Px K||^2 = {n['pxk2']:.6g}  ||Pz G||^2 = {n['pzg2']:.6g}")
    if "omega" in report:
        lines.append(f"Omega = {report['omega']:.6g}")
    for rep in report["reports"]:
        lines.append(f"{rep['title']}: {'PASS' if rep['ok'] else 'FAIL'}")
        for c in rep["checks"]:
            val = "" if c["value"] is None else f" [{c['value']:.6g}]"
            lines.append(f"  {'PASS' if c['passed'] else 'FAIL'}  {c['name']}{val}  {c['detail']}".rstrip())
    for note in report["notes"]:
        lines.append(f"note: {note}")
    return "\n".join(lines)
