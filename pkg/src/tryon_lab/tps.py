"""Thin-plate-spline warps: control lattice, linear solve, sampling grids.

Conventions:
  * normalized coordinates in [-1, 1], where -1 and +1 hit the centers of
    border pixels; grid last dim is (x, y);
  * backward warp: for each output pixel the grid stores the source
    location to sample in the input image;
  * ``theta`` is a length-2K vector of control-point offsets, laid out as
    K (dx, dy) pairs over the row-major base lattice. The warp maps the
    base lattice onto ``base + offsets``, so theta == 0 is the identity;
  * grids are float64 (coordinates are geometry and float32 cannot place
    pixel centers exactly); images and features stay in their own dtype.
"""

from __future__ import annotations

import torch

from .errors import ConfigurationError, InputError, NumericError


def base_grid(k_per_side: int) -> torch.Tensor:
    """Uniform control lattice over [-1, 1]^2, row-major, as (K, 2) float64."""
    if k_per_side < 2:
        raise ConfigurationError(f"k_per_side must be >= 2, got {k_per_side}")
    axis = torch.linspace(-1.0, 1.0, k_per_side, dtype=torch.float64)
    yy, xx = torch.meshgrid(axis, axis, indexing="ij")
    return torch.stack([xx.reshape(-1), yy.reshape(-1)], dim=1)


def _radial(sq_dist: torch.Tensor) -> torch.Tensor:
    # U(r) = r^2 log r^2, continued with U(0) = 0.
    out = torch.zeros_like(sq_dist)
    pos = sq_dist > 0
    out[pos] = sq_dist[pos] * torch.log(sq_dist[pos])
    return out


def identity_grid(h: int, w: int, dtype=torch.float64) -> torch.Tensor:
    xs = torch.linspace(-1.0, 1.0, w, dtype=dtype)
    ys = torch.linspace(-1.0, 1.0, h, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


class TpsWarper:
    """Precomputed TPS solve for a fixed base lattice.

    The kernel system has constant matrix, so theta -> spline coefficients
    is a single matmul against a cached inverse. The grid is produced as
    ``identity + linear(theta)`` which keeps theta == 0 exactly the
    identity and makes the whole map affine in theta.
    """

    def __init__(self, k_per_side: int = 5, reg: float = 1e-10):
        self.k_per_side = int(k_per_side)
        self.base = base_grid(k_per_side)          # (K, 2) float64
        k = self.base.shape[0]
        self.num_points = k

        d2 = torch.cdist(self.base, self.base).pow_(2)
        kernel = _radial(d2) + reg * torch.eye(k, dtype=torch.float64)
        p = torch.cat([torch.ones(k, 1, dtype=torch.float64), self.base], dim=1)
        lmat = torch.zeros(k + 3, k + 3, dtype=torch.float64)
        lmat[:k, :k] = kernel
        lmat[:k, k:] = p
        lmat[k:, :k] = p.T
        try:
            l_inv = torch.linalg.inv(lmat)
        except RuntimeError as exc:  # pragma: no cover - lattice is never degenerate
            raise NumericError(f"singular TPS system for k={k_per_side}: {exc}") from exc
        # Only the first K columns matter: the affine rows of the RHS are zero.
        self._solve = l_inv[:, :k].contiguous()    # (K+3, K) float64
        self._eval_cache: dict[tuple[int, int, torch.dtype], torch.Tensor] = {}
        self._solve_cache: dict[torch.dtype, torch.Tensor] = {torch.float64: self._solve}

    # -- coefficients ----------------------------------------------------

    @property
    def identity_coefficients(self) -> torch.Tensor:
        """(K+3, 2) coefficients of the exact identity map: zero radial part."""
        k = self.num_points
        coeffs = torch.zeros(k + 3, 2, dtype=torch.float64)
        coeffs[k + 1, 0] = 1.0   # f_x = qx
        coeffs[k + 2, 1] = 1.0   # f_y = qy
        return coeffs

    def _offsets(self, theta: torch.Tensor) -> torch.Tensor:
        theta = torch.as_tensor(theta)
        if theta.shape[-1] != 2 * self.num_points:
            raise InputError(
                f"theta has {theta.shape[-1]} entries, expected {2 * self.num_points}"
            )
        return theta.reshape(*theta.shape[:-1], self.num_points, 2)

    def _solve_as(self, dtype: torch.dtype) -> torch.Tensor:
        if dtype not in self._solve_cache:
            self._solve_cache[dtype] = self._solve.to(dtype)
        return self._solve_cache[dtype]

    def delta_coefficients(self, theta: torch.Tensor) -> torch.Tensor:
        """Spline coefficients of the displacement field, (..., K+3, 2)."""
        off = self._offsets(theta)
        solve = self._solve_as(off.dtype)
        return torch.einsum("ok,...kd->...od", solve, off)

    def coefficients(self, theta: torch.Tensor) -> torch.Tensor:
        """Full map coefficients: identity affine plus the theta-linear part."""
        delta = self.delta_coefficients(theta)
        return delta + self.identity_coefficients.to(delta.dtype)

    # -- evaluation ------------------------------------------------------

    def _eval_matrix(self, points: torch.Tensor) -> torch.Tensor:
        """[U | 1 | x | y] rows for arbitrary (n, 2) query points, float64."""
        pts = torch.as_tensor(points, dtype=torch.float64)
        d2 = torch.cdist(pts, self.base).pow_(2)
        u = _radial(d2)
        ones = torch.ones(pts.shape[0], 1, dtype=torch.float64)
        return torch.cat([u, ones, pts], dim=1)

    def _grid_eval_matrix(self, h: int, w: int, dtype: torch.dtype) -> torch.Tensor:
        key = (h, w, dtype)
        if key not in self._eval_cache:
            pts = identity_grid(h, w, dtype=torch.float64).reshape(-1, 2)
            self._eval_cache[key] = self._eval_matrix(pts).to(dtype)
        return self._eval_cache[key]

    def evaluate(self, theta: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
        """Evaluate the warp at arbitrary normalized points, (..., n, 2)."""
        pts = torch.as_tensor(points, dtype=torch.float64)
        emat = self._eval_matrix(pts).to(torch.as_tensor(theta).dtype)
        delta = self.delta_coefficients(theta)
        return pts.to(delta.dtype) + torch.einsum("ne,...ed->...nd", emat, delta)

    def grid(self, theta: torch.Tensor, h: int, w: int) -> torch.Tensor:
        """Float64 sampling grid, (..., h, w, 2); differentiable and affine in theta."""
        if h <= 0 or w <= 0:
            raise InputError(f"grid size must be positive, got {h}x{w}")
        theta = torch.as_tensor(theta)
        emat = self._grid_eval_matrix(h, w, torch.float64)
        delta = self.delta_coefficients(theta.to(torch.float64))
        disp = torch.einsum("ne,...ed->...nd", emat, delta)
        ident = identity_grid(h, w).reshape(-1, 2)
        return (ident + disp).reshape(*theta.shape[:-1], h, w, 2)

    def jacobian(self, h: int, w: int) -> torch.Tensor:
        """Closed-form d grid / d theta as (h*w*2, 2K) float64.

        The grid is identity + E @ S @ offsets with offsets = theta viewed
        as (K, 2); x picks even theta entries, y odd ones.
        """
        es = self._grid_eval_matrix(h, w, torch.float64) @ self._solve  # (h*w, K)
        n, k = es.shape
        jac = torch.zeros(n, 2, 2 * k, dtype=torch.float64)
        jac[:, 0, 0::2] = es
        jac[:, 1, 1::2] = es
        return jac.reshape(n * 2, 2 * k)


_default_warpers: dict[int, TpsWarper] = {}


def get_warper(k_per_side: int = 5) -> TpsWarper:
    if k_per_side not in _default_warpers:
        _default_warpers[k_per_side] = TpsWarper(k_per_side)
    return _default_warpers[k_per_side]


def make_grid(theta: torch.Tensor, h: int, w: int, k_per_side: int = 5) -> torch.Tensor:
    return get_warper(k_per_side).grid(theta, h, w)


def sample_bilinear(img: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Bilinear backward warp with border clamping.

    ``img`` is (c, h, w) or (b, c, h, w); ``grid`` is (gh, gw, 2) or
    (b, gh, gw, 2). Differentiable w.r.t. both arguments. Coordinate
    arithmetic runs in float64 so identity grids resolve to exact pixel
    centers; blending happens in the image dtype.
    """
    squeeze = img.dim() == 3
    if squeeze:
        img = img.unsqueeze(0)
    if grid.dim() == 3:
        grid = grid.unsqueeze(0).expand(img.shape[0], -1, -1, -1)
    if img.dim() != 4 or grid.dim() != 4 or grid.shape[-1] != 2:
        raise InputError(f"bad shapes: img {tuple(img.shape)}, grid {tuple(grid.shape)}")
    if img.shape[0] != grid.shape[0]:
        raise InputError(f"batch mismatch: img {img.shape[0]} vs grid {grid.shape[0]}")
    if not torch.isfinite(grid).all():
        raise InputError("sampling grid contains non-finite coordinates")

    b, c, h, w = img.shape
    gh, gw = grid.shape[1:3]
    coords = grid.to(torch.float64)
    x = ((coords[..., 0] + 1.0) * 0.5 * (w - 1)).clamp(0.0, float(w - 1))
    y = ((coords[..., 1] + 1.0) * 0.5 * (h - 1)).clamp(0.0, float(h - 1))
    x0 = x.floor()
    y0 = y.floor()
    fx = (x - x0).to(img.dtype)
    fy = (y - y0).to(img.dtype)
    ix0 = x0.detach().long()
    iy0 = y0.detach().long()
    ix1 = (ix0 + 1).clamp(max=w - 1)
    iy1 = (iy0 + 1).clamp(max=h - 1)

    flat = img.reshape(b, c, h * w)

    def corner(iy, ix):
        idx = (iy * w + ix).reshape(b, 1, gh * gw).expand(b, c, gh * gw)
        return flat.gather(2, idx).reshape(b, c, gh, gw)

    fx = fx.unsqueeze(1)
    fy = fy.unsqueeze(1)
    out = (
        corner(iy0, ix0) * (1 - fx) * (1 - fy)
        + corner(iy0, ix1) * fx * (1 - fy)
        + corner(iy1, ix0) * (1 - fx) * fy
        + corner(iy1, ix1) * fx * fy
    )
    return out.squeeze(0) if squeeze else out


def warp_pyramid(
    features: list[torch.Tensor], theta: torch.Tensor, warper: TpsWarper
) -> list[torch.Tensor]:
    """Warp every pyramid scale with the same theta at its own resolution."""
    out = []
    for feat in features:
        h, w = feat.shape[-2:]
        out.append(sample_bilinear(feat, warper.grid(theta, h, w)))
    return out


def warp_image_np(img, theta, warper: TpsWarper):
    """Convenience wrapper for (h, w, c) float numpy images."""
    import numpy as np

    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)
    theta_t = torch.as_tensor(theta, dtype=torch.float32)
    warped = sample_bilinear(t, warper.grid(theta_t, t.shape[1], t.shape[2]))
    return warped.permute(1, 2, 0).numpy()
