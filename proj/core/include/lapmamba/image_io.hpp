#pragma once

#include <string>

#include "lapmamba/tensor.hpp"

namespace lapmamba::imageio {

// Reads an 8-bit PNG or binary PPM (P6) into a (1,3,H,W) tensor in [0,1].
// Grayscale and RGBA PNGs are converted to RGB. Format is chosen by file
// extension (.png / .ppm); anything else is a format error.
Tensor read_image(const std::string& path);

// Writes a (1,C,H,W) or (C,H,W) tensor as 8-bit RGB. C must be 1 or 3;
// values are clamped to [0,1] and rounded.
void write_image(const std::string& path, const Tensor& img);

}  // namespace lapmamba::imageio
