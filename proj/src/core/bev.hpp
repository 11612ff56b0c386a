#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace bevlab {

// Metric extent of a BEV grid. World (x, y) maps to cell
// (floor((x - origin_x) / cell_size), floor((y - origin_y) / cell_size));
// the u axis (width_cells) follows x, the v axis (height_cells) follows y.
// Feature maps over this grid are [height_cells x width_cells x channels].
struct BevGridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 1.0;
  std::size_t height_cells = 1;  // v extent
  std::size_t width_cells = 1;   // u extent
  std::size_t channels = 1;

  void validate() const;
  bool contains_cell(long u, long v) const {
    return u >= 0 && v >= 0 && u < static_cast<long>(width_cells) &&
           v < static_cast<long>(height_cells);
  }
  long cell_u(double x) const;
  long cell_v(double y) const;
};

struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;  // radians about Z, normalized to (-pi, pi]
  int class_id = 0;

  void validate() const;
  // Footprint corners in world coordinates, counter-clockwise.
  std::array<std::pair<double, double>, 4> footprint_corners() const;
};

double normalize_yaw(double yaw);

// Axis-aligned cell rectangle, inclusive bounds.
struct AnchorBev {
  std::size_t min_u = 0, min_v = 0, max_u = 0, max_v = 0;

  std::size_t width() const { return max_u - min_u + 1; }
  std::size_t height() const { return max_v - min_v + 1; }
  bool overlaps(const AnchorBev& o) const {
    return min_u <= o.max_u && o.min_u <= max_u && min_v <= o.max_v &&
           o.min_v <= max_v;
  }
};

// Per-pixel probability over D depth bins; bins are [edges[d], edges[d+1]).
struct DepthDistribution {
  Tensor probs;                    // [H x W x D]
  std::vector<double> bin_edges;   // D + 1 ascending meters

  std::size_t bins() const { return bin_edges.empty() ? 0 : bin_edges.size() - 1; }
  double bin_center(std::size_t d) const {
    return 0.5 * (bin_edges[d] + bin_edges[d + 1]);
  }
  // Each pixel's vector must be non-negative and sum to 1 +- 1e-5.
  void validate() const;
};

// One-row pinhole: column u maps to the ray with lateral slope
// (u - cx) / fx; a sample at forward range r lands at world
// (r, r * slope). Rows share the column geometry.
struct PinholeCamera {
  double fx = 1.0;
  double cx = 0.0;

  double slope(double u) const { return (u - cx) / fx; }
  std::pair<double, double> project_to_world(double u, double range) const {
    return {range, range * slope(u)};
  }
  // Inverse: world point -> fractional column.
  double column_of(double x, double y) const { return cx + fx * (y / x); }
};

// Axis-aligned hull of the yaw-rotated footprint, clamped to the grid.
AnchorBev box_to_anchor(const Box3D& box, const BevGridSpec& grid);

// Contiguous sub-window copy; output [anchor.height() x anchor.width() x C].
Tensor crop_instance(const Tensor& bev, const AnchorBev& anchor);

// Scatter-add of a crop-shaped gradient back into a full-grid tensor.
void scatter_add_crop(Tensor& bev_grad, const AnchorBev& anchor, const Tensor& crop_grad);

// BEV_image(cell) = sum over (pixel, bin) landing in the cell of
// feature(pixel) * p_depth(pixel, bin); out-of-grid bins are dropped.
Tensor lift_splat(const Tensor& features, const DepthDistribution& depth,
                  const PinholeCamera& camera, const BevGridSpec& grid);

// Adjoint of lift_splat with respect to the pixel features.
Tensor lift_splat_backward(const Tensor& grad_bev, const DepthDistribution& depth,
                           const PinholeCamera& camera, const BevGridSpec& grid,
                           std::size_t image_h, std::size_t image_w,
                           std::size_t channels);

struct BevPoint {
  double x = 0, y = 0, z = 0;
  std::vector<double> feature;
};

enum class PoolMode { kMean, kMax };

struct PoolResult {
  Tensor bev;
  std::size_t dropped = 0;  // points outside the grid
};

PoolResult bev_pool_points(const std::vector<BevPoint>& points,
                           const BevGridSpec& grid, PoolMode mode,
                           Dtype dtype = Dtype::kF32);

// Max over the Z axis followed by a 1x1 projection to proj's output channels.
// voxels [X x Y x Z x C], proj [C x C_out] -> [X x Y x C_out].
Tensor height_compress(const Tensor& voxels, const Tensor& proj);

// Line-oriented text format: "cx cy cz l w h yaw class_id" per line.
std::vector<Box3D> load_boxes(const std::string& path);
void save_boxes(const std::string& path, const std::vector<Box3D>& boxes);

}  // namespace bevlab
