"""Free-boundary energy minimization: bending energy plus the measure of
the positivity set, relaxed through a smoothed indicator and driven by
preconditioned descent.

The sharp objective is sum (L_h u)^2 h^2 + |{u > 0}|.  The indicator is
relaxed to a cubic ramp of width eps, the width follows a halving
schedule, and each stage runs descent preconditioned by two nested
L-solves (the bending Hessian is L^T L, so this flattens its h^-4
conditioning).  Because any positive constant is a critical point of the
relaxed energy once eps < min u, each stage first tries a deterministic
family of downward bumps (scaled solutions of L B = 1) and keeps a bump
only when it strictly lowers the stage energy."""

import re
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .grid import ScalarField, assemble_operator
from .linsolve import solve_spd

_minimizer_solve_tol = 1e-8
_armijo_slope = 1e-4
_max_backtracks = 50
_probe_scales = (1.0, 2.0, 4.0)
_power_iterations = 4
_schedule_floor_abs = 1e-4
_schedule_floor_cells = 6.0
# A stage also ends, converged, once the energy is stationary: the drop over
# the last _stationary_window accepted steps averages below _stationary_rtol
# relative.  A windowed average is robust to step-to-step oscillation of the
# decrement, and even a full max_outer budget at that rate moves the energy
# by under 200 * 1e-10 * (1 + E), orders below any quantity read off the
# returned state.
_stationary_rtol = 1e-10
_stationary_window = 10

_fixed_rule = re.compile(r"^fixed\(\s*([0-9.eE+-]+)\s*\)$")


class DivergenceError(RuntimeError):
    """Descent could not decrease the energy; carries the history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = tuple(history)


@dataclass(frozen=True)
class EnergyConfig:
    """Continuation schedule and descent controls.

    epsilon_schedule: strictly decreasing positive ramp widths.
    step_rule: "power_iteration_backtracking" (curvature-scaled trial step,
        Armijo halving) or "fixed(s)" (constant step s, no line search).
    tol_grad: stage stops when the euclidean norm of the energy gradient
        over interior unknowns falls below this.
    max_outer: iteration cap per stage.
    """

    epsilon_schedule: tuple
    step_rule: str = "power_iteration_backtracking"
    tol_grad: float = 1e-7
    max_outer: int = 200

    def __post_init__(self):
        sched = tuple(float(e) for e in self.epsilon_schedule)
        if not sched:
            raise ValueError("epsilon schedule is empty")
        if any(e <= 0 for e in sched):
            raise ValueError("epsilon schedule must be positive")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("epsilon schedule must be strictly decreasing")
        object.__setattr__(self, "epsilon_schedule", sched)
        if self.tol_grad <= 0:
            raise ValueError("tol_grad must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.step_rule != "power_iteration_backtracking":
            m = _fixed_rule.match(self.step_rule)
            if m is None:
                raise ValueError("unknown step rule %r" % self.step_rule)
            s = float(m.group(1))
            if s <= 0:
                raise ValueError("fixed step must be positive")
            object.__setattr__(self, "_fixed_step", s)
        else:
            object.__setattr__(self, "_fixed_step", None)

    def fixed_step(self):
        return self._fixed_step


def default_schedule(domain, u0_max):
    """Halving widths from 0.25*max(u0) down to the resolvability floor.

    The floor is max(2h^2, 1e-4, 6 h max(u0)): the last term keeps the
    transition strip a few cells wide so quantities sampled across it
    (measure density, zero-set gradients) stay resolved on the grid.
    """
    if u0_max <= 0:
        raise ValueError("boundary data must be positive")
    floor = max(2.0 * domain.h ** 2, _schedule_floor_abs,
                _schedule_floor_cells * domain.h * u0_max)
    eps = 0.25 * u0_max
    out = []
    while eps > floor * (1.0 + 1e-12):
        out.append(eps)
        eps *= 0.5
    out.append(floor)
    return tuple(out)


@dataclass(frozen=True)
class MinimizerState:
    u: ScalarField
    v: ScalarField            # L_h u on interior nodes
    energy_bending: float
    energy_measure: float     # sharp positivity measure
    epsilon: float
    history: tuple            # rows (stage, iter, E_eps, E_sharp, max_Lu)
    converged: bool

    @property
    def energy_sharp(self):
        return self.energy_bending + self.energy_measure


# ---------------------------------------------------------------------------
# smoothed indicator


def smoothed_heaviside(t, eps):
    """C1 ramp: 0 below 0, cubic smoothstep on (0, eps), 1 above."""
    s = np.clip(np.asarray(t, dtype=float) / eps, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def smoothed_heaviside_prime(t, eps):
    t = np.asarray(t, dtype=float)
    s = t / eps
    inside = (s > 0.0) & (s < 1.0)
    out = np.zeros_like(t)
    si = s[inside]
    out[inside] = (6.0 * si - 6.0 * si * si) / eps
    return out


def _smoothed_heaviside_second(t, eps):
    t = np.asarray(t, dtype=float)
    s = t / eps
    inside = (s > 0.0) & (s < 1.0)
    out = np.zeros_like(t)
    out[inside] = (6.0 - 12.0 * s[inside]) / eps ** 2
    return out


# ---------------------------------------------------------------------------
# energies


def _measure_weights(domain):
    """Cell-coverage weights for area sums: each node's square cell counts
    by the (linearized) fraction of it lying inside the shape, so a node
    exactly on the curve counts half and rim cells taper off smoothly.
    Exact for straight edges through nodes; O(h^2) for smooth curves."""
    h = domain.h
    frac_i = np.clip(0.5 - domain.shape.sdf(domain.interior_xy) / h, 0.0, 1.0)
    frac_b = np.clip(0.5 - domain.shape.sdf(domain.boundary_xy) / h, 0.0, 1.0)
    return h * h * frac_i, h * h * frac_b


def _split_field(domain, u_field):
    ij = domain.interior_ij
    bj = domain.boundary_ij
    ui = u_field.values[ij[:, 0], ij[:, 1]]
    ub = u_field.values[bj[:, 0], bj[:, 1]]
    return ui, ub


def smoothed_energy(op, u_field, eps):
    """Relaxed energy and its gradient over interior unknowns.

    E_eps = sum (L_h u)^2 h^2 + sum H_eps(u) (cell weights), gradient
    2 h^2 L_h^T (L_h u) + w H_eps'(u).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = op.domain
    h2 = d.h ** 2
    wi, wb = _measure_weights(d)
    ui, ub = _split_field(d, u_field)
    v = op.apply_field(u_field)
    bending = h2 * float(v @ v)
    measure = float(wi @ smoothed_heaviside(ui, eps)) \
        + float(wb @ smoothed_heaviside(ub, eps))
    grad = 2.0 * h2 * (op.matrix @ v) + wi * smoothed_heaviside_prime(ui, eps)
    return bending + measure, grad


def sharp_energy(op, u_field):
    """(total, bending, measure) with the exact positivity indicator."""
    d = op.domain
    h2 = d.h ** 2
    wi, wb = _measure_weights(d)
    ui, ub = _split_field(d, u_field)
    v = op.apply_field(u_field)
    bending = h2 * float(v @ v)
    measure = float(wi @ (ui > 0.0)) + float(wb @ (ub > 0.0))
    return bending + measure, bending, measure


# ---------------------------------------------------------------------------
# boundary data and initialization


def _trace_values(domain, u0):
    if np.isscalar(u0):
        vals = np.full(domain.n_boundary, float(u0))
    elif callable(u0):
        proj = domain.boundary_proj
        vals = np.array([float(u0(x, y)) for x, y in proj])
    else:
        vals = np.asarray(u0, dtype=float)
        if vals.shape != (domain.n_boundary,):
            raise ValueError("boundary data needs one value per boundary node")
    return vals


def harmonic_extension(domain, coeff, u0, op=None):
    """Solve L u = 0 with the given trace; the canonical starting state."""
    if op is None:
        op = assemble_operator(coeff, domain)
    trace = _trace_values(domain, u0)
    sol = op.solve_dirichlet(np.zeros(domain.n_interior), trace)
    out = ScalarField(domain)
    bj = domain.boundary_ij
    ij = domain.interior_ij
    out.values[bj[:, 0], bj[:, 1]] = trace
    out.values[ij[:, 0], ij[:, 1]] = sol
    return out


# ---------------------------------------------------------------------------
# descent


def _precond_solve(op, rhs):
    x, _ = solve_spd(op.matrix, rhs, tol=_minimizer_solve_tol)
    return x


def _direction(op, v, grad_measure_over_weight):
    """d = -L^-1 (v + L^-1 (H'/2)): Newton step on the bending part with
    the measure force folded through the same preconditioner."""
    inner = _precond_solve(op, 0.5 * grad_measure_over_weight)
    return -_precond_solve(op, v + inner)


def _curvature_step(op, ui, eps):
    """Trial step 1/lambda_hat from power iteration on the preconditioned
    Hessian I + (2 L^2)^-1 diag(H'')."""
    hpp = _smoothed_heaviside_second(ui, eps)
    if not np.any(hpp):
        return 1.0
    x = np.ones_like(ui)
    x /= np.linalg.norm(x)
    lam = 1.0
    for _ in range(_power_iterations):
        y = x + 0.5 * _precond_solve(op, _precond_solve(op, hpp * x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 1.0
        x = y / lam
    return min(1.0, 1.0 / lam)


def _nucleation_probes(op, u_field, eps, bump, u0_max):
    """Try deterministic downward bumps; keep the best strict improvement.

    Positive constants are critical points of the relaxed energy (the ramp
    is flat above eps), so descent alone never leaves them; bumping by
    scaled solutions of L B = 1 offers exits and the energy test keeps the
    move only when it genuinely helps."""
    d = op.domain
    ij = d.interior_ij
    e_best, _ = smoothed_energy(op, u_field, eps)
    best = None
    for scale in _probe_scales:
        cand = u_field.copy()
        cand.values[ij[:, 0], ij[:, 1]] -= scale * u0_max * bump
        e_c, _ = smoothed_energy(op, cand, eps)
        if e_c < e_best - 1e-15:
            e_best, best = e_c, cand
    return best if best is not None else u_field


def minimize(domain, coeff, u0, cfg=None, op=None):
    """Minimize the relaxed energy over fields with the given trace.

    input : domain, coefficient field, boundary data (positive scalar,
            callable, or per-node array), optional EnergyConfig.
    output: MinimizerState at the last ramp width.  The trace is pinned
            exactly at every iterate; per-stage energies never increase.
    """
    if op is None:
        op = assemble_operator(coeff, domain)
    trace = _trace_values(domain, u0)
    if trace.min() <= 0:
        raise ValueError("boundary data must be positive everywhere")
    u0_max = float(trace.max())
    if cfg is None:
        cfg = EnergyConfig(default_schedule(domain, u0_max))
    if cfg.epsilon_schedule[-1] < 2.0 * domain.h ** 2 - 1e-15:
        raise ValueError("final ramp width below the 2h^2 resolvability floor")

    u = harmonic_extension(domain, coeff, u0, op=op)
    ij = domain.interior_ij
    bump = _precond_solve(op, np.ones(domain.n_interior))
    bump /= float(bump.max())

    history = []
    fixed = cfg.fixed_step()
    increases = 0
    converged = True

    for stage, eps in enumerate(cfg.epsilon_schedule):
        u = _nucleation_probes(op, u, eps, bump, u0_max)
        energy, grad = smoothed_energy(op, u, eps)
        v = op.apply_field(u)
        e_sharp = sharp_energy(op, u)[0]
        history.append((stage, 0, energy, e_sharp, float(v.max())))
        t0 = fixed if fixed is not None else _curvature_step(
            op, u.values[ij[:, 0], ij[:, 1]], eps)
        stage_done = False
        recent = [energy]

        for it in range(1, cfg.max_outer + 1):
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= cfg.tol_grad:
                stage_done = True
                break
            ui = u.values[ij[:, 0], ij[:, 1]]
            hp = smoothed_heaviside_prime(ui, eps)
            d_vec = _direction(op, v, hp)
            slope = float(grad @ d_vec)
            if slope >= 0.0:
                d_vec = -grad
                slope = -gnorm ** 2

            if fixed is not None:
                cand = u.copy()
                cand.values[ij[:, 0], ij[:, 1]] = ui + fixed * d_vec
                e_c, g_c = smoothed_energy(op, cand, eps)
                if e_c > energy + 1e-12 * (1.0 + abs(energy)):
                    increases += 1
                    if increases >= _max_backtracks:
                        raise DivergenceError(
                            "fixed-step descent increased the energy %d times"
                            % increases, history)
                    break
                u, energy, grad = cand, e_c, g_c
            else:
                t = t0
                accepted = False
                for _ in range(_max_backtracks):
                    cand = u.copy()
                    cand.values[ij[:, 0], ij[:, 1]] = ui + t * d_vec
                    e_c, g_c = smoothed_energy(op, cand, eps)
                    if e_c <= energy + _armijo_slope * t * slope:
                        u, energy, grad = cand, e_c, g_c
                        accepted = True
                        break
                    t *= 0.5
                if not accepted:
                    raise DivergenceError(
                        "backtracking exhausted %d halvings without descent"
                        % _max_backtracks, history)

            v = op.apply_field(u)
            e_sharp = sharp_energy(op, u)[0]
            history.append((stage, it, energy, e_sharp, float(v.max())))
            # descent that can no longer buy measurable energy is stationary
            # at this ramp width even if the gradient norm floor is higher
            recent.append(energy)
            if len(recent) > _stationary_window + 1:
                del recent[0]
            if (len(recent) == _stationary_window + 1 and
                    recent[0] - recent[-1] <= _stationary_window *
                    _stationary_rtol * (1.0 + abs(energy))):
                stage_done = True
                break

        if not stage_done:
            converged = False

    v = op.apply_field(u)
    v_field = ScalarField(domain)
    v_field.values[ij[:, 0], ij[:, 1]] = v
    _, bending, measure = sharp_energy(op, u)
    return MinimizerState(u, v_field, bending, measure,
                          cfg.epsilon_schedule[-1], tuple(history), converged)


# ---------------------------------------------------------------------------
# diagnostics on converged states


def supersolution_check(state):
    """Max of L_h u over interior nodes; nonpositive up to slack when the
    state satisfies the optimality condition."""
    d = state.u.domain
    ij = d.interior_ij
    return float(state.v.values[ij[:, 0], ij[:, 1]].max())


def hessian_min_eig(domain, values, margin=0.1):
    """Min over the inner subdomain (at least `margin` from the boundary)
    of the smallest eigenvalue of the central-difference Hessian."""
    from .greens import grid_hessian
    hess = grid_hessian(domain, values)
    pts = np.stack([domain.X, domain.Y], axis=-1)
    sd = domain.shape.sdf(pts)
    ok = (domain.mask == 2) & (sd <= -margin)
    ok[:2, :] = ok[-2:, :] = ok[:, :2] = ok[:, -2:] = False
    if not np.any(ok):
        raise ValueError("inner subdomain is empty at margin %g" % margin)
    a = hess[..., 0][ok]
    b = hess[..., 1][ok]
    c = hess[..., 2][ok]
    mean = 0.5 * (a + c)
    dev = np.sqrt((0.5 * (a - c)) ** 2 + b ** 2)
    return float((mean - dev).min())


def semiconvexity_metric(state, margin=0.1):
    return hessian_min_eig(state.u.domain, state.u.values, margin=margin)


def strip_measure_ratio(state, eps_probe):
    """|{0 < u < eps_probe}| / eps_probe by weighted node counting.

    Raises when the probe width cannot be resolved: it must cover at
    least ~4 cells across the strip, i.e. eps_probe >= 4 h |grad u| there.
    """
    if eps_probe <= 0:
        raise ValueError("probe width must be positive")
    d = state.u.domain
    u = state.u.values
    wi, wb = _measure_weights(d)
    ui, ub = _split_field(d, state.u)
    in_i = (ui > 0.0) & (ui < eps_probe)
    in_b = (ub > 0.0) & (ub < eps_probe)
    if not (np.any(in_i) or np.any(in_b)):
        # an empty strip is genuine only when no neighbor pair jumps across
        # the whole band; a pair bracketing (0, eps_probe) means the strip
        # fell between nodes and the probe width is unresolvable
        m = d.mask >= 1
        for ax in (0, 1):
            a = np.moveaxis(u, ax, 0)
            ok = np.moveaxis(m, ax, 0)
            pair = ok[:-1] & ok[1:]
            lo, hi = a[:-1], a[1:]
            bracket = ((lo <= 0.0) & (hi >= eps_probe)) | \
                      ((hi <= 0.0) & (lo >= eps_probe))
            if np.any(bracket & pair):
                raise ValueError("probe width %g falls between grid values"
                                 % eps_probe)
        return 0.0
    gx, gy = np.gradient(u, d.h, edge_order=1)
    gmag = np.hypot(gx, gy)
    ij = d.interior_ij
    gmax = float(gmag[ij[in_i, 0], ij[in_i, 1]].max()) if np.any(in_i) else 0.0
    if gmax > 0 and eps_probe < 4.0 * d.h * gmax:
        raise ValueError("probe width %g below grid resolvability %g"
                         % (eps_probe, 4.0 * d.h * gmax))
    area = float(wi @ in_i) + float(wb @ in_b)
    return area / eps_probe


def write_history(state, path):
    """Per-iteration CSV: stage,iter,E_eps,E_sharp,max_Lu."""
    with open(path, "w") as f:
        f.write("stage,iter,E_eps,E_sharp,max_Lu\n")
        for stage, it, e_eps, e_sharp, max_lu in state.history:
            f.write("%d,%d,%.17g,%.17g,%.17g\n" % (stage, it, e_eps, e_sharp, max_lu))
