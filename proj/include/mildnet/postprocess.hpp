#pragma once

#include "mildnet/image.hpp"
#include "mildnet/morphology.hpp"

namespace mild {

inline Mask binarize(const Grid& prob, double threshold = 0.5) {
    Mask m = make_mask(prob.h, prob.w);
    for (size_t i = 0; i < prob.v.size(); ++i) m.v[i] = prob.v[i] >= threshold ? 1 : 0;
    return m;
}

// Probability map -> instance map: threshold, disk opening, 4-connected
// component labeling. Contours are not used for instance separation.
inline InstanceMap postprocess(const Grid& prob, double threshold = 0.5, int disk_radius = 5) {
    Mask binary = binarize(prob, threshold);
    if (disk_radius > 0) binary = opening(binary, disk_offsets(disk_radius));
    return connected_components(binary);
}

inline InstanceMap postprocess_mask(const Mask& binary, int disk_radius = 5) {
    Mask opened = disk_radius > 0 ? opening(binary, disk_offsets(disk_radius)) : binary;
    return connected_components(opened);
}

}  // namespace mild
