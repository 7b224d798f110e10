#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace jdl {

// Channel-major, row-major image in the [0, 255] pixel domain.
struct ImageTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageTensor() = default;
    ImageTensor(int channels, int height, int width, double fill = 0.0);

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }

    double& at(int c, int y, int x) { return data[index(c, y, x)]; }
    double at(int c, int y, int x) const { return data[index(c, y, x)]; }

    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }

    bool same_shape(const ImageTensor& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

struct LabeledDataset {
    std::vector<ImageTensor> images;
    std::vector<int> labels;
    int num_classes = 0;

    LabeledDataset() = default;
    // Throws ArgumentError unless images are non-empty, uniformly shaped, and
    // every label lies in [0, num_classes).
    LabeledDataset(std::vector<ImageTensor> images, std::vector<int> labels, int num_classes);

    std::size_t size() const { return images.size(); }
    const ImageTensor& shape_example() const { return images.front(); }
};

// Binary "P6" PPM with maxval 255. Errors name the byte offset.
ImageTensor load_ppm(const std::filesystem::path& path);
void save_ppm(const ImageTensor& tensor, const std::filesystem::path& path);

// "JDLT" raw format: magic, u32 version=1, u32 channels, u32 height, u32 width,
// then channels*height*width little-endian f32 values.
void save_raw(const ImageTensor& tensor, const std::filesystem::path& path);
ImageTensor load_raw(const std::filesystem::path& path);

// Rounds height and width up to multiples of 8 by replicating the last row/column.
ImageTensor pad_to_block_multiple(const ImageTensor& tensor);

// Two classes of size x size RGB images. Class 0 carries a horizontal cosine in
// luminance, class 1 the same pattern turned vertical; both get a seeded
// high-pass noise bounded by kSyntheticNoiseAmplitude.
inline constexpr double kSyntheticPatternAmplitude = 40.0;
inline constexpr double kSyntheticNoiseAmplitude = 24.0;
LabeledDataset make_synthetic_frequency_dataset(int n_per_class, int size, std::uint64_t seed);

// Dataset directory: manifest.csv with header "file,label", one row per image;
// files ending in .ppm are read as PPM, anything else as JDLT raw.
LabeledDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir);

}  // namespace jdl
