#pragma once

#include "facepatch/types.hpp"

namespace facepatch {

/// How taps that fall outside the source are treated.
enum class Edge {
  renormalize,  ///< drop them and renormalize the remaining weights
  zero,         ///< treat the outside as black
};

/// Linear 1-D resampling operator of shape out_size x in_size.
///
/// Output sample o is centred at source coordinate start + (o + 0.5) * step
/// (half-pixel convention, no corner alignment). When step > 1 the bilinear
/// tent is widened to `step` source pixels so downscaling averages instead
/// of skipping pixels; for step <= 1 this is plain bilinear interpolation.
template <class T>
SparseOp<T> resample_operator(int in_size, int out_size, double start, double step, Edge edge);

/// Number of samples kept when scaling `size` by `scale`.
int scaled_size(int size, double scale);

/// Separable resampling: out_c = rows * in_c * cols^T.
template <class T>
Image<T> resample(const Image<T>& in, const SparseOp<T>& rows, const SparseOp<T>& cols);

/// Adjoint of resample(): carries an output gradient back to the source.
template <class T>
Image<T> resample_adjoint(const Image<T>& grad_out, const SparseOp<T>& rows, const SparseOp<T>& cols);

/// Image scaled by `scale` about the origin; output size scaled_size() per axis.
template <class T>
Image<T> resize(const Image<T>& in, double scale);

/// The square/rectangular region of `in` covered by `box`, resampled to
/// size x size. Parts of the box outside the image read as black.
template <class T>
Image<T> crop_resize(const Image<T>& in, const BoundingBox& box, int size);

}  // namespace facepatch
