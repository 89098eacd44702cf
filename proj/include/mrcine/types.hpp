#pragma once

// Domain containers shared by every stage of the pipeline. Axis order is
// fixed per type and documented on each member.

#include <cstdint>

#include "mrcine/tensor.hpp"

namespace mrcine {

// Multi-coil Cartesian k-space over time.
template <typename R>
struct KTData {
  CTensor<R> values;  // (kx, ky, coil, frame)

  Index nx() const { return values.dim(0); }
  Index ny() const { return values.dim(1); }
  Index ncoils() const { return values.dim(2); }
  Index nframes() const { return values.dim(3); }
};

// M-set complex image stack over time.
template <typename R>
struct CineImage {
  CTensor<R> values;  // (x, y, set, frame)

  Index nx() const { return values.dim(0); }
  Index ny() const { return values.dim(1); }
  Index nsets() const { return values.dim(2); }
  Index nframes() const { return values.dim(3); }
};

// Binary k-t sampling pattern with the parameters that produced it.
struct KTMask {
  Tensor<std::uint8_t> pattern;  // (kx, ky, frame)
  double accel = 1.0;
  double partial_echo_frac = 0.0;
  std::uint64_t seed = 0;
  double density_exponent = 3.0;
  Index central_band = 4;
  Index calib_width = 24;

  Index nx() const { return pattern.dim(0); }
  Index ny() const { return pattern.dim(1); }
  Index nframes() const { return pattern.dim(2); }
};

// M sets of N-coil ESPIRiT sensitivity maps with per-pixel eigenvalues.
template <typename R>
struct EspiritMaps {
  CTensor<R> maps;         // (x, y, coil, set)
  RTensor<R> eigenvalues;  // (x, y, set)
  Index calib_width = 24;
  Index kernel = 6;
  double sv_threshold = 0.02;
  double eig_crop = 0.9;

  Index nx() const { return maps.dim(0); }
  Index ny() const { return maps.dim(1); }
  Index ncoils() const { return maps.dim(2); }
  Index nsets() const { return maps.dim(3); }
};

}  // namespace mrcine

namespace mrcine {

// One supervised example: fully-sampled k-space, the maps used by the model,
// the sampling pattern, and the target image Eᴴ F⁻¹ y_full.
template <typename R>
struct TrainExample {
  KTData<R> y_full;
  EspiritMaps<R> maps;
  KTMask mask;
  CineImage<R> x_gt;
};

}  // namespace mrcine
