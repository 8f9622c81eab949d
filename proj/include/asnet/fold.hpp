#ifndef ASNET_FOLD_HPP
#define ASNET_FOLD_HPP

#include "asnet/core.hpp"

#include <string>

namespace asnet {

/// Folded channel count: ceil(m / side).
int q_of(int m, int side);

/// Folded transformation. The time axis is zero-filled to q*side and the
/// sensor axis zero-padded on the right to `side`; channel k holds the
/// offset-k, stride-q decimation: out[k, i, j] = s[i*q + k, j].
FoldedTensor fold(const RawSignalMatrix& s, int side = 128, bool pad_sensors_to_side = true);

/// Exact left inverse of fold(). Throws ShapeError on inconsistent shapes and
/// ValidationError if the declared pad region is not all zeros.
RawSignalMatrix unfold(const FoldedTensor& f, int m_original, int n_original, double fs_hz = 0.0);

/// Sidecar JSON with q, side, pad_time and pad_sensors.
std::string fold_sidecar_json(const FoldedTensor& f, int m_original, int n_original);

}  // namespace asnet

#endif  // ASNET_FOLD_HPP
