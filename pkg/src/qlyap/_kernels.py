"""Optional numba acceleration of the RK4 feedback integrator.

The jitted routine reproduces the numpy kernel's per-row arithmetic order
operation by operation, so the two paths agree to the last few ulps and both
are independent of batch composition.  Import failure (no numba installed)
leaves ``HAVE_NUMBA`` false and the caller on the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - absence exercised only on numba-free installs
    if os.environ.get("QLYAP_NO_NUMBA"):
        raise ImportError("numba disabled via QLYAP_NO_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def integrate_rows(energies, controls, p, k_strength, psi0, n_steps, h,
                       rec_states, rec_fields, rec_v, record_stride, do_record,
                       drift_limit):
        """Row-sequential RK4 with feedback fields recomputed per stage.

        Returns (final_states, max_drift, ok).  ``ok`` is 0 when some row's
        pre-renormalization drift exceeded ``drift_limit`` (or went
        non-finite), in which case the caller must raise.
        """
        B, n = psi0.shape
        m = controls.shape[0]
        out = np.empty((B, n), dtype=np.complex128)
        y = np.empty(n, dtype=np.complex128)
        si = np.empty(n, dtype=np.complex128)
        k1 = np.empty(n, dtype=np.complex128)
        k2 = np.empty(n, dtype=np.complex128)
        k3 = np.empty(n, dtype=np.complex128)
        k4 = np.empty(n, dtype=np.complex128)
        phi = np.empty((m, n), dtype=np.complex128)
        fvals = np.empty(m, dtype=np.float64)
        half_h = 0.5 * h
        sixth_h = h / 6.0
        max_drift = 0.0
        ok = 1

        for b in range(B):
            for i in range(n):
                y[i] = psi0[b, i]
            prow = p[b]
            for step in range(n_steps + 1):
                want_rec = do_record and step % record_stride == 0
                _stage(y, energies, controls, prow, k_strength, phi, fvals, k1)
                if want_rec:
                    i_rec = step // record_stride
                    v = 0.0
                    for i in range(n):
                        rec_states[i_rec, b, i] = y[i]
                        v = v + prow[i] * (y[i].real * y[i].real + y[i].imag * y[i].imag)
                    for c in range(m):
                        rec_fields[i_rec, b, c] = fvals[c]
                    rec_v[i_rec, b] = v
                if step == n_steps:
                    break
                # remaining stages
                for i in range(n):
                    si[i] = k1[i] * half_h + y[i]
                _stage(si, energies, controls, prow, k_strength, phi, fvals, k2)
                for i in range(n):
                    si[i] = k2[i] * half_h + y[i]
                _stage(si, energies, controls, prow, k_strength, phi, fvals, k3)
                for i in range(n):
                    si[i] = k3[i] * h + y[i]
                _stage(si, energies, controls, prow, k_strength, phi, fvals, k4)
                for i in range(n):
                    y[i] = y[i] + ((k2[i] + k3[i]) * 2.0 + k1[i] + k4[i]) * sixth_h
                sre = y[0].real * y[0].real
                sim = y[0].imag * y[0].imag
                for i in range(1, n):
                    sre = sre + y[i].real * y[i].real
                    sim = sim + y[i].imag * y[i].imag
                nrm = np.sqrt(sre + sim)
                drift = abs(nrm - 1.0)
                if not (drift <= drift_limit):
                    ok = 0
                    break
                if drift > max_drift:
                    max_drift = drift
                for i in range(n):
                    y[i] = complex(y[i].real / nrm, y[i].imag / nrm)
            for i in range(n):
                out[b, i] = y[i]
            if ok == 0:
                break
        return out, max_drift, ok

    @numba.njit(cache=True, inline="always")
    def _stage(y, energies, controls, prow, k_strength, phi, fvals, kout):
        n = y.shape[0]
        m = controls.shape[0]
        for c in range(m):
            for i in range(n):
                acc = y[0] * controls[c, i, 0]
                for j in range(1, n):
                    acc = acc + y[j] * controls[c, i, j]
                phi[c, i] = acc
            u = 0.0
            for j in range(n):
                r = y[j].real * phi[c, j].imag
                r = r - y[j].imag * phi[c, j].real
                r = r * prow[j]
                u = u + r
            fvals[c] = u * (-2.0 * k_strength)
        for i in range(n):
            z = y[i] * energies[i]
            for c in range(m):
                z = z + phi[c, i] * fvals[c]
            kout[i] = complex(z.imag, -z.real)
