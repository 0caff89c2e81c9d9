#pragma once

#include "mlsm/types.hpp"

#include <string>

namespace mlsm {

/// Images are Tensor<float> with batch 1, 3 channels, values in [0, 1].

/// Decode a PPM (P5/P6) or JPEG file into a 3-channel float image.
/// Throws on unreadable files, decode failures and zero-area images.
TensorF decode_image_file(const std::string& path);

/// Bilinear resample with half-pixel centers; identical sizes copy exactly.
TensorF bilinear_resize(const TensorF& img, int out_h, int out_w);

/// decode + bilinear resize to target_size x target_size; no augmentation.
TensorF load_image(const std::string& path, int target_size);

/// Write a binary PPM (P6), clamping values to [0, 1] before 8-bit quantization.
void save_ppm(const std::string& path, const TensorF& img);

}  // namespace mlsm
