#pragma once

#include "percad/data.hpp"
#include "percad/random.hpp"

// Procedural stand-in data for desk-scale runs and tests: stroke-rendered
// digits written in the MNIST IDX layout, and smooth textured images for
// calibration corpora and contrast studies.
namespace percad::synth {

// One 28x28 grayscale digit with randomized affine jitter, stroke width
// and intensity.
data::RawImage render_digit(int digit, Rng& rng, Index size = 28);

// Writes train/t10k IDX pairs under dir with per_class_train /
// per_class_test samples of each digit 0..9.
void make_digit_dataset(const std::string& dir, Index per_class_train,
                        Index per_class_test, std::uint64_t seed);

// Smooth random field plus soft blobs; c is 1 or 3.
data::RawImage make_texture(Rng& rng, Index size, Index channels);

// Folder of textures (PGM for 1 channel, PPM for 3).
void make_texture_folder(const std::string& dir, Index count, Index size,
                         Index channels, std::uint64_t seed);

// Translation with edge clamping (the shifted partner of a contrast pair).
data::RawImage shift_image(const data::RawImage& img, Index dx, Index dy);

}  // namespace percad::synth
