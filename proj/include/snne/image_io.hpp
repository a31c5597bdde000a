#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "snne/tensor.hpp"

namespace snne {

// 8-bit interleaved RGB image.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

// Decodes a PNG or JPEG file (sniffed by signature). Grayscale and alpha
// inputs are converted to RGB. Throws IngestError with the path on failure.
ImageU8 read_image(const std::string& path);

void write_png(const std::string& path, const ImageU8& image);

// (1,3,H,W) tensor in [0,1].
Tensor4f image_to_tensor(const ImageU8& image);

// Clamps to [0,1] and rounds to 8 bits. Requires batch 1, 3 channels.
ImageU8 tensor_to_image(const Tensor4f& tensor);

}  // namespace snne
