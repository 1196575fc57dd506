"""Interface coefficients: Fresnel reflection and the Lambertian lobe."""
import numpy as np


def _q(cos_t, eta):
    sin2 = 1.0 - cos_t * cos_t
    return np.sqrt(eta - sin2 + 0j)  # principal branch, Re >= 0


def fresnel(theta, eta):
    """TE and TM reflection coefficients for incidence angle ``theta`` (rad).

    ``eta`` is the complex relative permittivity of the far medium (vacuum on
    the near side). At exact grazing incidence both coefficients are -1, which
    is the limit for every medium; this is also returned for ``eta == 1``
    there, where the formula itself is 0/0.
    """
    theta = np.asarray(theta, float)
    return fresnel_cos(np.cos(theta), eta, grazing=theta >= np.pi / 2)


def fresnel_cos(cos_t, eta, grazing=None):
    """Same as :func:`fresnel` but parameterised by cos(theta)."""
    cos_t = np.asarray(cos_t, float)
    eta = np.asarray(eta, complex)
    q = _q(cos_t, eta)
    with np.errstate(invalid="ignore", divide="ignore"):
        g_te = (cos_t - q) / (cos_t + q)
        g_tm = (eta * cos_t - q) / (eta * cos_t + q)
    if grazing is None:
        grazing = cos_t <= 0.0
    if np.any(grazing):
        g_te = np.where(grazing, -1.0 + 0j, g_te)
        g_tm = np.where(grazing, -1.0 + 0j, g_tm)
    return g_te, g_tm


def fresnel_deta(cos_t, eta):
    """Complex derivatives d(Gamma_TE)/d(eta) and d(Gamma_TM)/d(eta).

    Both coefficients are holomorphic in eta away from the branch cut, so a
    real parameter x enters through d(Gamma)/dx = Gamma'(eta) * d(eta)/dx.
    """
    cos_t = np.asarray(cos_t, float)
    eta = np.asarray(eta, complex)
    q = _q(cos_t, eta)
    sin2 = 1.0 - cos_t * cos_t
    with np.errstate(invalid="ignore", divide="ignore"):
        d_te = -cos_t / (q * (cos_t + q) ** 2)
        d_tm = cos_t * (eta - 2.0 * sin2) / (q * (eta * cos_t + q) ** 2)
    bad = cos_t <= 0.0
    if np.any(bad):
        d_te = np.where(bad, 0j, d_te)
        d_tm = np.where(bad, 0j, d_tm)
    return d_te, d_tm


def mean_reflectivity(g_te, g_tm):
    """Polarisation-averaged |Gamma|: sqrt((|G_TE|^2 + |G_TM|^2) / 2)."""
    return np.sqrt(0.5 * (np.abs(g_te) ** 2 + np.abs(g_tm) ** 2))


def lambertian_bsdf(k_i, k_s, n):
    """Diffuse lobe cos(theta_s)/pi; zero below the surface.

    ``k_i`` does not enter the Lambertian lobe but is kept in the signature so
    alternative lobes can be dropped in.
    """
    cos_s = np.einsum("...i,...i->...", np.asarray(k_s, float), np.asarray(n, float))
    return np.where(cos_s > 0.0, cos_s, 0.0) / np.pi
