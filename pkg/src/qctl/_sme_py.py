"""Pure-numpy Euler-Maruyama kernel, vectorized over trajectories.

Same contract as the compiled ``qctl._sme_kernel.run``:

``run(rho0, h0, h1, l, eta, dt, dw, record_every, law, c0, k, p, gamma, u_const, mode0=0)``
integrates ``dw.shape[0]`` trajectories of
``d rho = (-i[H0 + u H1, rho] + D(L, rho)) dt + sqrt(eta) G(L, rho) dW``
from a common ``rho0``, where ``dw`` holds the Wiener increments (already
scaled by ``sqrt(dt)``). The control law is encoded as

* ``law = 0``: ``u = c0``;
* ``law = 1``: ``u = c0 + Re tr(K rho)``;
* ``law = 2``: hysteresis switch on ``a = Re tr(P rho)``; ``a >= gamma``
  selects ``u = Re tr(K rho)``, ``a <= gamma / 2`` selects ``u = u_const``,
  in between the previous selection is kept (initially ``mode0``).

After every step the state is Hermitized, negative eigenvalues are clipped
and the trace renormalized. Returns ``(states, u, dY, clips, fail)`` with
states recorded every ``record_every`` steps (step 0 included),
``dY = sqrt(eta) tr((L + L^dagger) rho) dt + dW`` and ``fail`` the first
non-finite step index per trajectory (``-1`` if none).
"""
from __future__ import annotations

import numpy as np

CLIP_EVENT = -1e-9


def _re_trace(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ij,tji->t", a, rho))


def _project(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rho.shape[-1]
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    idx = np.arange(n)
    rho[:, idx, idx] = rho[:, idx, idx].real
    if n == 2:
        a = rho[:, 0, 0].real
        d = rho[:, 1, 1].real
        b = rho[:, 0, 1]
        m = 0.5 * (a + d)
        r = np.sqrt(0.25 * (a - d) * (a - d) + b.real * b.real + b.imag * b.imag)
        lm = m - r
        neg = lm < 0.0
        events = lm < CLIP_EVENT
        if np.any(neg):
            lp = m[neg] + r[neg]
            gap = lp - lm[neg]
            sub = rho[neg]
            sub[:, 0, 0] = (a[neg] - lm[neg]) / gap
            sub[:, 1, 1] = (d[neg] - lm[neg]) / gap
            sub[:, 0, 1] = b[neg] / gap
            sub[:, 1, 0] = np.conj(b[neg]) / gap
            rho[neg] = sub
        keep = ~neg
        tr = rho[keep, 0, 0].real + rho[keep, 1, 1].real
        rho[keep] = rho[keep] / tr[:, None, None]
        return rho, events
    w, v = np.linalg.eigh(rho)
    neg = w[:, 0] < 0.0
    events = w[:, 0] < CLIP_EVENT
    if np.any(neg):
        wc = np.clip(w[neg], 0.0, None)
        vn = v[neg]
        rho[neg] = np.einsum("tik,tk,tjk->tij", vn, wc, vn.conj())
    tr = np.real(np.trace(rho, axis1=1, axis2=2))
    return rho / tr[:, None, None], events


def run(rho0, h0, h1, l, eta, dt, dw, record_every, law, c0, k, p, gamma, u_const, mode0=0):
    rho0 = np.asarray(rho0, dtype=complex)
    h0 = np.asarray(h0, dtype=complex)
    h1 = np.asarray(h1, dtype=complex)
    l = np.asarray(l, dtype=complex)
    k = np.asarray(k, dtype=complex)
    p = np.asarray(p, dtype=complex)
    dw = np.asarray(dw, dtype=float)
    n = rho0.shape[0]
    n_traj, n_steps = dw.shape
    n_rec = n_steps // record_every + 1
    ldag = l.conj().T
    ldl = ldag @ l
    sqeta = np.sqrt(eta)

    states = np.zeros((n_traj, n_rec, n, n), dtype=complex)
    u_out = np.zeros((n_traj, n_steps))
    dy_out = np.zeros((n_traj, n_steps))
    clips = np.zeros(n_traj, dtype=np.int32)
    fail = np.full(n_traj, -1, dtype=np.int32)

    rho = np.broadcast_to(rho0, (n_traj, n, n)).copy()
    states[:, 0] = rho
    mode = np.full(n_traj, int(mode0), dtype=np.int8)
    alive = np.ones(n_traj, dtype=bool)
    rec = 1
    for step in range(n_steps):
        if law == 0:
            u = np.full(n_traj, float(c0))
        elif law == 1:
            u = c0 + _re_trace(k, rho)
        else:
            ov = _re_trace(p, rho)
            mode = np.where(ov >= gamma, 1, np.where(ov <= 0.5 * gamma, 0, mode)).astype(np.int8)
            u = np.where(mode == 1, _re_trace(k, rho), float(u_const))
        u_out[alive, step] = u[alive]
        h = h0 + u[:, None, None] * h1
        a = h @ rho
        b = l @ rho
        bl = b @ ldag
        c = ldl @ rho
        trb = np.real(np.trace(b, axis1=1, axis2=2))
        sdw = dw[:, step]
        dy_out[alive, step] = (sqeta * 2.0 * trb * dt + sdw)[alive]
        a_h = np.conj(np.swapaxes(a, 1, 2))
        b_h = np.conj(np.swapaxes(b, 1, 2))
        c_h = np.conj(np.swapaxes(c, 1, 2))
        drift = -1j * (a - a_h) + bl - 0.5 * (c + c_h)
        diff = b + b_h - 2.0 * trb[:, None, None] * rho
        new = rho + drift * dt + sqeta * diff * sdw[:, None, None]
        bad = alive & ~np.isfinite((new.real + new.imag).sum(axis=(1, 2)))
        if np.any(bad):
            fail[bad] = step
            alive &= ~bad
            new[bad] = rho[bad]
        new, events = _project(new)
        clips += (events & alive).astype(np.int32)
        rho = np.where(alive[:, None, None], new, rho)
        if (step + 1) % record_every == 0:
            states[alive, rec] = rho[alive]
            rec += 1
    return states, u_out, dy_out, clips, fail
