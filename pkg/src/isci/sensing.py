"""First-order diffuse (NLOS) sensing: floor-bounce channels, user-induced
power variations, fingerprint tables and least-squares localization.

Light travels LED -> reflector -> ceiling sensing PD, where the reflector is
either a floor cell or the user's horizontal body patch.  A user both adds a
reflection path and occludes the floor cells under their footprint, so the
per-PD received power shifts; matching the shifted readings against
precomputed per-candidate signatures yields the position estimate.

Fingerprints store per-LED, per-PD *gain* deltas rather than power deltas,
so predictions stay valid when the controller changes the LED powers: the
predicted variation for candidate k is |sum_i P_i * dH[k, i, j]|.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .photometry import concentrator_gain, lambertian_order
from .scene import Led, Scene, SensingPd, UserModel

__all__ = [
    "SensingModel",
    "FingerprintTable",
    "LocalizationResult",
    "nlos_element_gain",
    "nlos_user_gain",
    "occluded_set",
    "received_sensing_power",
    "build_fingerprint_table",
    "predict_power_deltas",
    "localize",
    "save_fingerprint",
    "load_fingerprint",
]

_MAGIC = b"LFPT"
_VERSION = 1

NOISELESS_DETECT_EPS = 1e-12

# Shared footprint-boundary guard so the per-candidate occlusion stencil and
# occluded_set agree on cells whose centers sit exactly at the radius.
_OCCLUSION_TOL = 1e-9


def nlos_element_gain(led: Led, element_xy: Sequence[float], element_area: float,
                      reflectance: float, pd: SensingPd) -> float:
    """One-bounce gain LED -> floor element -> sensing PD (scalar reference)."""
    ex, ey = float(element_xy[0]), float(element_xy[1])
    return _one_bounce_gain(led, (ex, ey, 0.0), element_area, reflectance, pd)


def nlos_user_gain(led: Led, user_xy: Sequence[float], user: UserModel,
                   pd: SensingPd) -> float:
    """One-bounce gain LED -> user body patch -> sensing PD (scalar reference)."""
    ux, uy = float(user_xy[0]), float(user_xy[1])
    return _one_bounce_gain(led, (ux, uy, user.patch_height_m), user.patch_area_m2,
                            user.reflectance, pd)


def _one_bounce_gain(led: Led, patch: tuple[float, float, float], area: float,
                     reflectance: float, pd: SensingPd) -> float:
    px, py, pz = patch
    dz1 = led.position[2] - pz
    dz2 = pd.position[2] - pz
    if dz1 <= 0 or dz2 <= 0:
        raise ValueError("reflecting patch must lie below the ceiling")
    d1sq = (led.position[0] - px) ** 2 + (led.position[1] - py) ** 2 + dz1 * dz1
    d2sq = (pd.position[0] - px) ** 2 + (pd.position[1] - py) ** 2 + dz2 * dz2
    cos_emit = dz1 / math.sqrt(d1sq)       # irradiance angle at the LED
    cos_in = cos_emit                      # incidence on the horizontal patch
    cos_out = dz2 / math.sqrt(d2sq)        # emission from the patch
    cos_pd = cos_out                       # incidence at the ceiling PD
    psi_deg = math.degrees(math.acos(min(1.0, cos_pd)))
    if psi_deg > pd.fov_deg + 1e-12:
        return 0.0
    g = concentrator_gain(psi_deg, pd.refractive_index, pd.fov_deg)
    m = lambertian_order(led.half_power_angle_deg)
    return (reflectance * (m + 1.0) * pd.area_m2 * area
            * cos_emit**m * cos_pd * cos_in * cos_out * pd.filter_gain * g
            / (2.0 * math.pi**2 * d1sq * d2sq))


def occluded_set(scene: Scene, user_xy: Sequence[float]) -> np.ndarray:
    """Indices of floor cells whose centers fall inside the user footprint.

    A user outside the room occludes nothing.
    """
    ux, uy = float(user_xy[0]), float(user_xy[1])
    if scene.user.footprint_radius_m <= 0 or not scene.room.contains_xy(ux, uy):
        return np.empty(0, dtype=int)
    centers = scene.grid.centers()
    dist = np.hypot(centers[:, 0] - ux, centers[:, 1] - uy)
    return np.flatnonzero(dist <= scene.user.footprint_radius_m + _OCCLUSION_TOL)


def _emitter_factors(scene: Scene, points: np.ndarray, point_z: float) -> np.ndarray:
    """cos^m(phi) * cos(alpha) / d^2 for every LED-to-patch pair, (M, P)."""
    led_pos = scene.led_positions()
    m_ord = np.array([lambertian_order(led.half_power_angle_deg) for led in scene.leds])
    dz = led_pos[:, 2][:, None] - point_z
    dx = led_pos[:, 0][:, None] - points[:, 0][None, :]
    dy = led_pos[:, 1][:, None] - points[:, 1][None, :]
    d2 = dx * dx + dy * dy + dz * dz
    cos_ang = dz / np.sqrt(d2)
    return cos_ang ** (m_ord[:, None] + 1.0) / d2


def _collector_factors(scene: Scene, points: np.ndarray, point_z: float) -> np.ndarray:
    """A_s * T_s * g(psi) * cos(beta) * cos(psi) / d^2 per patch-PD pair, (P, N)."""
    pd_pos = scene.sensing_pd_positions()
    dz = pd_pos[:, 2][None, :] - point_z
    dx = pd_pos[:, 0][None, :] - points[:, 0][:, None]
    dy = pd_pos[:, 1][None, :] - points[:, 1][:, None]
    d2 = dx * dx + dy * dy + dz * dz
    cos_ang = dz / np.sqrt(d2)
    out = np.zeros_like(d2)
    for j, pd in enumerate(scene.sensing_pds):
        cos_fov = math.cos(math.radians(pd.fov_deg))
        gain = pd.refractive_index**2 / math.sin(math.radians(pd.fov_deg)) ** 2
        mask = cos_ang[:, j] >= cos_fov - 1e-15
        out[:, j] = np.where(
            mask,
            pd.area_m2 * pd.filter_gain * gain * cos_ang[:, j] ** 2 / d2[:, j],
            0.0,
        )
    return out


class SensingModel:
    """Precomputed one-bounce gain tensors for a fixed scene.

    element_gains has shape (M, K, N): LED i via floor cell k to PD j.
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        centers = scene.grid.centers()
        m_ord = np.array([lambertian_order(led.half_power_angle_deg) for led in scene.leds])
        emit = _emitter_factors(scene, centers, 0.0)
        collect = _collector_factors(scene, centers, 0.0)
        rho_area = scene.grid.reflectance_array() * scene.grid.cell_area
        front = (m_ord + 1.0) / (2.0 * math.pi**2)
        self.element_gains = np.einsum("i,ik,k,kj->ikj", front, emit, rho_area, collect)
        self.baseline_gains = self.element_gains.sum(axis=1)  # (M, N)

    def user_gain(self, user_xy: Sequence[float]) -> np.ndarray:
        """Gain matrix (M, N) contributed by the user patch at ``user_xy``."""
        scene = self.scene
        pt = np.array([[float(user_xy[0]), float(user_xy[1])]])
        m_ord = np.array([lambertian_order(led.half_power_angle_deg) for led in scene.leds])
        emit = _emitter_factors(scene, pt, scene.user.patch_height_m)      # (M, 1)
        collect = _collector_factors(scene, pt, scene.user.patch_height_m)  # (1, N)
        rho_area = scene.user.reflectance * scene.user.patch_area_m2
        front = (m_ord + 1.0) / (2.0 * math.pi**2)
        return front[:, None] * emit * rho_area * collect

    def received_power(self, powers: np.ndarray,
                       user_xy: Optional[Sequence[float]] = None) -> np.ndarray:
        """Per-PD received optical power (N,), with or without a user."""
        powers = np.asarray(powers, dtype=float)
        gains = self.baseline_gains
        if user_xy is not None:
            occ = occluded_set(self.scene, user_xy)
            occluded = self.element_gains[:, occ, :].sum(axis=1) if len(occ) else 0.0
            gains = gains - occluded + self.user_gain(user_xy)
        return powers @ gains


def received_sensing_power(scene: Scene, powers: np.ndarray,
                           user_xy: Optional[Sequence[float]] = None) -> np.ndarray:
    """One-shot wrapper around SensingModel.received_power."""
    return SensingModel(scene).received_power(powers, user_xy)


@dataclass(frozen=True, eq=False)
class FingerprintTable:
    """Per-candidate gain deltas for power-scaled variation prediction."""

    candidates: np.ndarray  # (K, 2) candidate positions (floor cell centers)
    baseline: np.ndarray    # (M, N) no-user gain sums
    deltas: np.ndarray      # (K, M, N) user-at-k gain minus occluded-cell gains


@dataclass(frozen=True)
class LocalizationResult:
    position: Optional[tuple[float, float]]
    index: Optional[int]
    losses: np.ndarray
    detected: bool


def build_fingerprint_table(scene: Scene, model: Optional[SensingModel] = None) -> FingerprintTable:
    """Precompute gain deltas for a user at every floor-cell candidate.

    delta[k, i, j] = user-patch gain at candidate k minus the summed gains of
    the floor cells the footprint occludes there.  Deterministic; independent
    of the LED powers.
    """
    if model is None:
        model = SensingModel(scene)
    grid = scene.grid
    nx, ny = grid.nx, grid.ny
    n_leds, n_pds = scene.num_leds, scene.num_sensing_pds
    centers = grid.centers()

    m_ord = np.array([lambertian_order(led.half_power_angle_deg) for led in scene.leds])
    emit = _emitter_factors(scene, centers, scene.user.patch_height_m)
    collect = _collector_factors(scene, centers, scene.user.patch_height_m)
    rho_area = scene.user.reflectance * scene.user.patch_area_m2
    front = (m_ord + 1.0) / (2.0 * math.pi**2) * rho_area
    user_gains = np.einsum("i,ik,kj->ikj", front, emit, collect)  # (M, K, N)

    # Candidates are cell centers, so occluded cells sit at fixed index
    # offsets; accumulate shifted views instead of looping candidates.
    reach = (int(scene.user.footprint_radius_m / grid.pitch) + 1
             if scene.user.footprint_radius_m > 0 else -1)
    gains4 = model.element_gains.reshape(n_leds, nx, ny, n_pds)
    occ4 = np.zeros_like(gains4)
    limit = scene.user.footprint_radius_m + _OCCLUSION_TOL
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            if grid.pitch * math.hypot(di, dj) > limit:
                continue
            dst_x = slice(max(0, -di), nx - max(0, di))
            dst_y = slice(max(0, -dj), ny - max(0, dj))
            src_x = slice(max(0, di), nx + min(0, di))
            src_y = slice(max(0, dj), ny + min(0, dj))
            occ4[:, dst_x, dst_y, :] += gains4[:, src_x, src_y, :]

    deltas = user_gains - occ4.reshape(n_leds, nx * ny, n_pds)
    return FingerprintTable(candidates=centers,
                            baseline=model.baseline_gains.copy(),
                            deltas=np.ascontiguousarray(deltas.transpose(1, 0, 2)))


def predict_power_deltas(table: FingerprintTable, powers: np.ndarray) -> np.ndarray:
    """Predicted per-PD power variation for every candidate, (K, N)."""
    powers = np.asarray(powers, dtype=float)
    return np.abs(np.einsum("kij,i->kj", table.deltas, powers))


def localize(measured: np.ndarray, baseline: np.ndarray, powers: np.ndarray,
             table: FingerprintTable,
             epsilon_detect: float = NOISELESS_DETECT_EPS) -> LocalizationResult:
    """Least-squares fingerprint match of measured power variations.

    The user counts as detected when any PD's variation reaches
    ``epsilon_detect``; the estimate is the loss-minimizing candidate, ties
    broken toward the lowest index.
    """
    measured = np.asarray(measured, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    if measured.shape != baseline.shape:
        raise ValueError(f"measured shape {measured.shape} != baseline {baseline.shape}")
    if measured.shape[0] != table.deltas.shape[2]:
        raise ValueError(f"{measured.shape[0]} PD readings for a "
                         f"{table.deltas.shape[2]}-PD fingerprint table")
    actual = np.abs(measured - baseline)
    predicted = predict_power_deltas(table, powers)
    losses = ((actual[None, :] - predicted) ** 2).sum(axis=1)
    detected = bool(actual.max() >= epsilon_detect)
    if not detected:
        return LocalizationResult(position=None, index=None, losses=losses,
                                  detected=False)
    k = int(np.argmin(losses))
    pos = (float(table.candidates[k, 0]), float(table.candidates[k, 1]))
    return LocalizationResult(position=pos, index=k, losses=losses, detected=True)


# ---------------------------------------------------------------------------
# Fingerprint persistence
# ---------------------------------------------------------------------------

def save_fingerprint(table: FingerprintTable) -> bytes:
    """Serialize: magic, u16 version, u32 K/M/N, then baseline (M*N f64),
    candidate coordinates (K*2 f64) and deltas (K*M*N f64), little-endian."""
    k, m, n = table.deltas.shape
    head = _MAGIC + struct.pack("<H", _VERSION) + struct.pack("<III", k, m, n)
    body = (np.ascontiguousarray(table.baseline, dtype="<f8").tobytes()
            + np.ascontiguousarray(table.candidates, dtype="<f8").tobytes()
            + np.ascontiguousarray(table.deltas, dtype="<f8").tobytes())
    return head + body


def load_fingerprint(blob: bytes) -> FingerprintTable:
    if blob[:4] != _MAGIC:
        raise ValueError("not a fingerprint table (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported fingerprint version {version}")
    k, m, n = struct.unpack_from("<III", blob, 6)
    offset = 18
    expected = offset + 8 * (m * n + 2 * k + k * m * n)
    if len(blob) != expected:
        raise ValueError(f"fingerprint blob is {len(blob)} bytes, expected {expected}")
    baseline = np.frombuffer(blob, dtype="<f8", count=m * n, offset=offset).reshape(m, n)
    offset += 8 * m * n
    candidates = np.frombuffer(blob, dtype="<f8", count=2 * k, offset=offset).reshape(k, 2)
    offset += 16 * k
    deltas = np.frombuffer(blob, dtype="<f8", count=k * m * n, offset=offset).reshape(k, m, n)
    return FingerprintTable(candidates=candidates.copy(), baseline=baseline.copy(),
                            deltas=deltas.copy())
