#ifndef ASNET_BEAMFORM_HPP
#define ASNET_BEAMFORM_HPP

#include "asnet/core.hpp"

namespace asnet {

/// Fractional sample index of the time of flight from `pixel_xy` to element `element`.
double delay_index(const Eigen::Vector2d& pixel_xy, int element, const ArrayGeometry& geom);

/// Per-channel running sum over time. Turns the bipolar transducer pulse into
/// a unipolar one so that back-projected traces add coherently at the source.
RawSignalMatrix integrate_channels(const RawSignalMatrix& s);

struct DasOptions {
  /// Back-project integrated traces (default). When false the raw traces are
  /// summed directly, which cancels at the source for a bipolar pulse.
  bool integrate = true;
};

/// Delay-and-sum on the geometry's pixel grid. Linear in `s`; delays that fall
/// outside the record contribute zero. No apodization, envelope or clipping.
ImageGrid das_reconstruct(const RawSignalMatrix& s, const ArrayGeometry& geom,
                          const DasOptions& options = {});

/// Min-max scaling to [0, 1]; a constant image maps to zeros.
ImageGrid normalize_minmax(const ImageGrid& img);

}  // namespace asnet

#endif  // ASNET_BEAMFORM_HPP
