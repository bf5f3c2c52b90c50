#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xfield/projector.hpp"
#include "xfield/volume.hpp"

namespace xfield {

/// Read-only row-major raster.
struct ImageView {
  std::span<const double> values;
  int width = 0;
  int height = 0;
};

inline ImageView view_of(const DetectorImage& img) { return {img.values, img.width, img.height}; }

/// Peak signal-to-noise ratio in dB; identical inputs give +infinity.
/// A non-positive data_range selects max(reference).
double psnr(ImageView pred, ImageView ref, double data_range = 0.0);
double psnr(const DetectorImage& pred, const DetectorImage& ref, double data_range = 0.0);

inline bool psnr_infinite(double db) { return db == std::numeric_limits<double>::infinity(); }

struct SsimOptions {
  int window = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over the windows that fit entirely inside the image.
double ssim(ImageView x, ImageView y, double data_range, const SsimOptions& opt = {});
double ssim(const DetectorImage& x, const DetectorImage& y, double data_range = 0.0,
            const SsimOptions& opt = {});

/// SSIM and d SSIM / d x (same raster as x).
double ssim_gradient(ImageView x, ImageView y, double data_range, std::span<double> grad_x,
                     const SsimOptions& opt = {});

struct MetricRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double data_range = 0.0;

  double mean_psnr() const;  // infinite if every row is infinite
  double mean_ssim() const;
  std::string to_csv() const;
  std::string to_table() const;
};

/// Per-view metrics of two stacks with matching rasters and view counts.
MetricReport stack_metrics(const ProjectionStack& pred, const ProjectionStack& ref,
                           double data_range = 0.0);

struct VolumeMetrics {
  double psnr = 0.0;
  double mean_slice_ssim = 0.0;
  std::vector<double> slice_ssim;  // one per axial (z) slice
  double data_range = 0.0;

  MetricReport report() const;
};

VolumeMetrics volume_metrics(const VoxelVolume& pred, const VoxelVolume& ref,
                             double data_range = 0.0);

std::string format_db(double db);

}  // namespace xfield
