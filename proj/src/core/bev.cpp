#include "core/bev.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bevlab {

void BevGridSpec::validate() const {
  if (cell_size <= 0) fail(Status::kValidationError, "cell_size must be positive");
  if (height_cells == 0 || width_cells == 0 || channels == 0) {
    fail(Status::kValidationError, "grid extents and channels must be positive");
  }
}

long BevGridSpec::cell_u(double x) const {
  return static_cast<long>(std::floor((x - origin_x) / cell_size));
}

long BevGridSpec::cell_v(double y) const {
  return static_cast<long>(std::floor((y - origin_y) / cell_size));
}

double normalize_yaw(double yaw) {
  double y = std::remainder(yaw, 2.0 * M_PI);  // (-pi, pi] up to the boundary
  if (y <= -M_PI) y += 2.0 * M_PI;
  return y;
}

void Box3D::validate() const {
  if (l <= 0 || w <= 0 || h <= 0) {
    fail(Status::kValidationError, "box dimensions must be positive");
  }
}

std::array<std::pair<double, double>, 4> Box3D::footprint_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hx = 0.5 * l, hy = 0.5 * w;
  std::array<std::pair<double, double>, 4> out;
  const double dx[4] = {+hx, +hx, -hx, -hx};
  const double dy[4] = {+hy, -hy, -hy, +hy};
  for (int i = 0; i < 4; ++i) {
    out[i] = {cx + c * dx[i] - s * dy[i], cy + s * dx[i] + c * dy[i]};
  }
  return out;
}

void DepthDistribution::validate() const {
  if (probs.ndim() != 3) {
    fail(Status::kValidationError, "depth probabilities must be [H x W x D]");
  }
  if (bin_edges.size() != probs.extent(2) + 1) {
    fail(Status::kValidationError, "bin edge count must be D + 1");
  }
  for (std::size_t d = 0; d + 1 < bin_edges.size(); ++d) {
    if (!(bin_edges[d] < bin_edges[d + 1])) {
      fail(Status::kValidationError, "bin edges must be ascending");
    }
  }
  const std::size_t hw = probs.extent(0) * probs.extent(1);
  const std::size_t nd = probs.extent(2);
  for (std::size_t p = 0; p < hw; ++p) {
    double sum = 0;
    for (std::size_t d = 0; d < nd; ++d) {
      const double v = probs.get(p * nd + d);
      if (v < 0) fail(Status::kValidationError, "negative depth probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) {
      char msg[96];
      std::snprintf(msg, sizeof(msg), "depth row %zu sums to %.8f", p, sum);
      fail(Status::kValidationError, msg);
    }
  }
}

AnchorBev box_to_anchor(const Box3D& box, const BevGridSpec& grid) {
  grid.validate();
  box.validate();
  const auto corners = box.footprint_corners();
  double min_x = corners[0].first, max_x = corners[0].first;
  double min_y = corners[0].second, max_y = corners[0].second;
  for (const auto& [x, y] : corners) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  const long u0 = grid.cell_u(min_x), u1 = grid.cell_u(max_x);
  const long v0 = grid.cell_v(min_y), v1 = grid.cell_v(max_y);
  const long wmax = static_cast<long>(grid.width_cells) - 1;
  const long hmax = static_cast<long>(grid.height_cells) - 1;
  if (u1 < 0 || v1 < 0 || u0 > wmax || v0 > hmax) {
    fail(Status::kOutOfExtent, "box footprint lies outside the grid");
  }
  AnchorBev a;
  a.min_u = static_cast<std::size_t>(std::clamp(u0, 0L, wmax));
  a.max_u = static_cast<std::size_t>(std::clamp(u1, 0L, wmax));
  a.min_v = static_cast<std::size_t>(std::clamp(v0, 0L, hmax));
  a.max_v = static_cast<std::size_t>(std::clamp(v1, 0L, hmax));
  return a;
}

namespace {

void check_anchor_in(const Tensor& bev, const AnchorBev& a) {
  if (bev.ndim() != 3) fail(Status::kDimensionMismatch, "BEV tensor must be [H x W x C]");
  if (a.min_u > a.max_u || a.min_v > a.max_v || a.max_v >= bev.extent(0) ||
      a.max_u >= bev.extent(1)) {
    fail(Status::kBoundsError, "anchor outside grid tensor");
  }
}

}  // namespace

Tensor crop_instance(const Tensor& bev, const AnchorBev& anchor) {
  check_anchor_in(bev, anchor);
  const std::size_t c = bev.extent(2), w = bev.extent(1);
  Tensor out({anchor.height(), anchor.width(), c}, bev.dtype());
  dispatch_dtype(bev.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = bev.data<T>();
    auto dst = out.data<T>();
    for (std::size_t v = 0; v < anchor.height(); ++v) {
      const T* s = src.data() + ((anchor.min_v + v) * w + anchor.min_u) * c;
      std::copy(s, s + anchor.width() * c, dst.data() + v * anchor.width() * c);
    }
  });
  return out;
}

void scatter_add_crop(Tensor& bev_grad, const AnchorBev& anchor, const Tensor& crop_grad) {
  check_anchor_in(bev_grad, anchor);
  if (crop_grad.extent(0) != anchor.height() || crop_grad.extent(1) != anchor.width() ||
      crop_grad.extent(2) != bev_grad.extent(2)) {
    fail(Status::kDimensionMismatch, "crop gradient shape does not match anchor");
  }
  const std::size_t c = bev_grad.extent(2), w = bev_grad.extent(1);
  dispatch_dtype(bev_grad.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = bev_grad.data<T>();
    auto src = crop_grad.data<T>();
    for (std::size_t v = 0; v < anchor.height(); ++v) {
      T* d = dst.data() + ((anchor.min_v + v) * w + anchor.min_u) * c;
      const T* s = src.data() + v * anchor.width() * c;
      for (std::size_t i = 0; i < anchor.width() * c; ++i) d[i] += s[i];
    }
  });
}

Tensor lift_splat(const Tensor& features, const DepthDistribution& depth,
                  const PinholeCamera& camera, const BevGridSpec& grid) {
  grid.validate();
  depth.validate();
  if (features.ndim() != 3) {
    fail(Status::kDimensionMismatch, "features must be [H x W x C]");
  }
  if (features.extent(0) != depth.probs.extent(0) ||
      features.extent(1) != depth.probs.extent(1)) {
    fail(Status::kDimensionMismatch, "feature and depth grids disagree");
  }
  const std::size_t h = features.extent(0), w = features.extent(1),
                    c = features.extent(2), nd = depth.bins();
  Tensor out({grid.height_cells, grid.width_cells, c}, features.dtype());
  dispatch_dtype(features.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto feat = features.data<T>();
    auto dst = out.data<T>();
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t u = 0; u < w; ++u) {
        const T* f = feat.data() + (r * w + u) * c;
        const std::size_t pix = r * w + u;
        for (std::size_t d = 0; d < nd; ++d) {
          const double p = depth.probs.get(pix * nd + d);
          if (p == 0.0) continue;
          const auto [x, y] = camera.project_to_world(static_cast<double>(u),
                                                      depth.bin_center(d));
          const long cu = grid.cell_u(x), cv = grid.cell_v(y);
          if (!grid.contains_cell(cu, cv)) continue;
          T* o = dst.data() + (static_cast<std::size_t>(cv) * grid.width_cells +
                               static_cast<std::size_t>(cu)) * c;
          const T pw = static_cast<T>(p);
          for (std::size_t ch = 0; ch < c; ++ch) o[ch] += pw * f[ch];
        }
      }
    }
  });
  return out;
}

Tensor lift_splat_backward(const Tensor& grad_bev, const DepthDistribution& depth,
                           const PinholeCamera& camera, const BevGridSpec& grid,
                           std::size_t image_h, std::size_t image_w,
                           std::size_t channels) {
  grid.validate();
  if (grad_bev.ndim() != 3 || grad_bev.extent(0) != grid.height_cells ||
      grad_bev.extent(1) != grid.width_cells || grad_bev.extent(2) != channels) {
    fail(Status::kDimensionMismatch, "BEV gradient shape does not match grid");
  }
  const std::size_t nd = depth.bins();
  Tensor out({image_h, image_w, channels}, grad_bev.dtype());
  dispatch_dtype(grad_bev.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto g = grad_bev.data<T>();
    auto dst = out.data<T>();
    for (std::size_t r = 0; r < image_h; ++r) {
      for (std::size_t u = 0; u < image_w; ++u) {
        T* o = dst.data() + (r * image_w + u) * channels;
        const std::size_t pix = r * image_w + u;
        for (std::size_t d = 0; d < nd; ++d) {
          const double p = depth.probs.get(pix * nd + d);
          if (p == 0.0) continue;
          const auto [x, y] = camera.project_to_world(static_cast<double>(u),
                                                      depth.bin_center(d));
          const long cu = grid.cell_u(x), cv = grid.cell_v(y);
          if (!grid.contains_cell(cu, cv)) continue;
          const T* gc = g.data() + (static_cast<std::size_t>(cv) * grid.width_cells +
                                    static_cast<std::size_t>(cu)) * channels;
          const T pw = static_cast<T>(p);
          for (std::size_t ch = 0; ch < channels; ++ch) o[ch] += pw * gc[ch];
        }
      }
    }
  });
  return out;
}

PoolResult bev_pool_points(const std::vector<BevPoint>& points,
                           const BevGridSpec& grid, PoolMode mode, Dtype dtype) {
  grid.validate();
  PoolResult res{Tensor({grid.height_cells, grid.width_cells, grid.channels}, dtype), 0};
  std::vector<std::uint32_t> counts(grid.height_cells * grid.width_cells, 0);
  for (const auto& pt : points) {
    if (pt.feature.size() != grid.channels) {
      fail(Status::kDimensionMismatch, "point feature length does not match grid channels");
    }
    const long cu = grid.cell_u(pt.x), cv = grid.cell_v(pt.y);
    if (!grid.contains_cell(cu, cv)) {
      ++res.dropped;
      continue;
    }
    const std::size_t cell = static_cast<std::size_t>(cv) * grid.width_cells +
                             static_cast<std::size_t>(cu);
    const std::size_t base = cell * grid.channels;
    if (mode == PoolMode::kMean) {
      for (std::size_t ch = 0; ch < grid.channels; ++ch) {
        res.bev.set(base + ch, res.bev.get(base + ch) + pt.feature[ch]);
      }
    } else {
      if (counts[cell] == 0) {
        for (std::size_t ch = 0; ch < grid.channels; ++ch) {
          res.bev.set(base + ch, pt.feature[ch]);
        }
      } else {
        for (std::size_t ch = 0; ch < grid.channels; ++ch) {
          res.bev.set(base + ch, std::max(res.bev.get(base + ch), pt.feature[ch]));
        }
      }
    }
    ++counts[cell];
  }
  if (mode == PoolMode::kMean) {
    for (std::size_t cell = 0; cell < counts.size(); ++cell) {
      if (counts[cell] < 2) continue;
      const double inv = 1.0 / counts[cell];
      for (std::size_t ch = 0; ch < grid.channels; ++ch) {
        const std::size_t i = cell * grid.channels + ch;
        res.bev.set(i, res.bev.get(i) * inv);
      }
    }
  }
  return res;
}

Tensor height_compress(const Tensor& voxels, const Tensor& proj) {
  if (voxels.ndim() != 4) {
    fail(Status::kDimensionMismatch, "voxels must be [X x Y x Z x C]");
  }
  if (proj.ndim() != 2 || proj.extent(0) != voxels.extent(3)) {
    fail(Status::kDimensionMismatch, "projection rows must match voxel channels");
  }
  if (voxels.dtype() != proj.dtype()) {
    fail(Status::kDimensionMismatch, "height_compress dtype mismatch");
  }
  const std::size_t nx = voxels.extent(0), ny = voxels.extent(1),
                    nz = voxels.extent(2), c = voxels.extent(3),
                    co = proj.extent(1);
  Tensor out({nx, ny, co}, voxels.dtype());
  dispatch_dtype(voxels.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto v = voxels.data<T>();
    auto w = proj.data<T>();
    auto o = out.data<T>();
    std::vector<T> col(c);
    for (std::size_t x = 0; x < nx; ++x) {
      for (std::size_t y = 0; y < ny; ++y) {
        const T* base = v.data() + ((x * ny + y) * nz) * c;
        for (std::size_t ch = 0; ch < c; ++ch) col[ch] = base[ch];
        for (std::size_t z = 1; z < nz; ++z) {
          const T* zp = base + z * c;
          for (std::size_t ch = 0; ch < c; ++ch) col[ch] = std::max(col[ch], zp[ch]);
        }
        T* op = o.data() + (x * ny + y) * co;
        for (std::size_t j = 0; j < co; ++j) {
          T acc = T(0);
          for (std::size_t ch = 0; ch < c; ++ch) acc += col[ch] * w[ch * co + j];
          op[j] = acc;
        }
      }
    }
  });
  return out;
}

std::vector<Box3D> load_boxes(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(Status::kIoError, "cannot open box file: " + path);
  std::vector<Box3D> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Box3D b;
    if (!(ls >> b.cx >> b.cy >> b.cz >> b.l >> b.w >> b.h >> b.yaw >> b.class_id)) {
      fail(Status::kFormatError,
           "malformed box line " + std::to_string(lineno) + " in " + path);
    }
    b.yaw = normalize_yaw(b.yaw);
    b.validate();
    boxes.push_back(b);
  }
  return boxes;
}

void save_boxes(const std::string& path, const std::vector<Box3D>& boxes) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(Status::kIoError, "cannot open box file for write: " + path);
  char line[256];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %d\n",
                  b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw, b.class_id);
    os << line;
  }
}

}  // namespace bevlab
