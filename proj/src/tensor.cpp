#include "jdl/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "jdl/error.hpp"

namespace jdl {

namespace {

constexpr char kRawMagic[4] = {'J', 'D', 'L', 'T'};
constexpr std::uint32_t kRawVersion = 1;
// Guards against absurd headers before any allocation happens.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FormatError("short write to " + path.string());
    }
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

// Reads one whitespace-delimited ASCII integer from a PPM header, skipping
// '#' comments. Advances pos.
long parse_header_int(const std::vector<unsigned char>& bytes, std::size_t& pos, const char* what) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(bytes[pos])) {
            ++pos;
        }
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
            continue;
        }
        break;
    }
    const std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > std::numeric_limits<int>::max()) {
            throw FormatError(std::string("PPM ") + what + " overflows at byte offset " + std::to_string(start));
        }
        ++pos;
    }
    if (pos == start) {
        throw FormatError(std::string("PPM header: expected ") + what + " at byte offset " + std::to_string(start));
    }
    return value;
}

}  // namespace

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : channels(channels), height(height), width(width) {
    if (channels < 0 || height < 0 || width < 0) {
        throw ArgumentError("negative tensor dimension");
    }
    data.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

LabeledDataset::LabeledDataset(std::vector<ImageTensor> images_in, std::vector<int> labels_in, int num_classes_in)
    : images(std::move(images_in)), labels(std::move(labels_in)), num_classes(num_classes_in) {
    if (images.empty()) {
        throw ArgumentError("dataset has no images");
    }
    if (images.size() != labels.size()) {
        throw ArgumentError("dataset image/label count mismatch");
    }
    for (const auto& img : images) {
        if (!img.same_shape(images.front())) {
            throw ArgumentError("dataset images differ in shape");
        }
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) {
            throw ArgumentError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

ImageTensor load_ppm(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw FormatError("PPM: missing P6 magic at byte offset 0");
    }
    std::size_t pos = 2;
    const long width = parse_header_int(bytes, pos, "width");
    const long height = parse_header_int(bytes, pos, "height");
    const std::size_t maxval_pos = pos;
    const long maxval = parse_header_int(bytes, pos, "maxval");
    if (maxval != 255) {
        throw FormatError("PPM: maxval " + std::to_string(maxval) + " != 255 near byte offset " +
                          std::to_string(maxval_pos));
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw FormatError("PPM: expected single whitespace after maxval at byte offset " + std::to_string(pos));
    }
    ++pos;
    const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
    if (bytes.size() - pos < need) {
        throw FormatError("PPM: truncated payload, expected " + std::to_string(need) + " bytes from offset " +
                          std::to_string(pos) + ", file ends at byte offset " + std::to_string(bytes.size()));
    }
    ImageTensor out(3, static_cast<int>(height), static_cast<int>(width));
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(c, y, x) = bytes[pos++];
            }
        }
    }
    return out;
}

void save_ppm(const ImageTensor& tensor, const std::filesystem::path& path) {
    if (tensor.channels != 3) {
        throw ArgumentError("PPM output needs 3 channels");
    }
    const std::string header =
        "P6\n" + std::to_string(tensor.width) + " " + std::to_string(tensor.height) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    for (int y = 0; y < tensor.height; ++y) {
        for (int x = 0; x < tensor.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(std::round(tensor.at(c, y, x)), 0.0, 255.0);
                bytes.push_back(static_cast<unsigned char>(v));
            }
        }
    }
    write_all(path, bytes);
}

void save_raw(const ImageTensor& tensor, const std::filesystem::path& path) {
    std::vector<unsigned char> bytes(std::begin(kRawMagic), std::end(kRawMagic));
    put_u32(bytes, kRawVersion);
    put_u32(bytes, static_cast<std::uint32_t>(tensor.channels));
    put_u32(bytes, static_cast<std::uint32_t>(tensor.height));
    put_u32(bytes, static_cast<std::uint32_t>(tensor.width));
    bytes.reserve(bytes.size() + tensor.size() * 4);
    for (double v : tensor.data) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    write_all(path, bytes);
}

ImageTensor load_raw(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kRawMagic, 4) != 0) {
        throw FormatError("raw tensor: bad magic at byte offset 0");
    }
    if (bytes.size() < 20) {
        throw FormatError("raw tensor: truncated header, file ends at byte offset " + std::to_string(bytes.size()));
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kRawVersion) {
        throw FormatError("raw tensor: unsupported version " + std::to_string(version) + " at byte offset 4");
    }
    const std::uint32_t c = get_u32(bytes.data() + 8);
    const std::uint32_t h = get_u32(bytes.data() + 12);
    const std::uint32_t w = get_u32(bytes.data() + 16);
    const std::uint64_t count = std::uint64_t{c} * h * w;
    if (c > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
        h > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
        w > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) || count > kMaxElements) {
        throw FormatError("raw tensor: dimension overflow in header at byte offset 8");
    }
    if (bytes.size() - 20 != count * 4) {
        throw FormatError("raw tensor: payload is " + std::to_string(bytes.size() - 20) + " bytes, header implies " +
                          std::to_string(count * 4) + " (payload starts at byte offset 20)");
    }
    ImageTensor out(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < count; ++i) {
        out.data[i] = std::bit_cast<float>(get_u32(bytes.data() + 20 + 4 * i));
    }
    return out;
}

ImageTensor pad_to_block_multiple(const ImageTensor& tensor) {
    const int h = std::max(8, (tensor.height + 7) / 8 * 8);
    const int w = std::max(8, (tensor.width + 7) / 8 * 8);
    if (h == tensor.height && w == tensor.width) {
        return tensor;
    }
    if (tensor.height == 0 || tensor.width == 0) {
        throw ArgumentError("cannot pad an empty image");
    }
    ImageTensor out(tensor.channels, h, w);
    for (int c = 0; c < tensor.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            const int sy = std::min(y, tensor.height - 1);
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = tensor.at(c, sy, std::min(x, tensor.width - 1));
            }
        }
    }
    return out;
}

LabeledDataset make_synthetic_frequency_dataset(int n_per_class, int size, std::uint64_t seed) {
    if (size <= 0 || size % 8 != 0) {
        throw ArgumentError("synthetic image size must be a positive multiple of 8");
    }
    if (n_per_class < 1) {
        throw ArgumentError("n_per_class must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    std::vector<ImageTensor> images;
    std::vector<int> labels;
    for (int i = 0; i < n_per_class; ++i) {
        for (int label = 0; label < 2; ++label) {
            ImageTensor img(3, size, size);
            const double amplitude = kSyntheticPatternAmplitude * (1.0 + 0.25 * unit(rng));
            for (int c = 0; c < 3; ++c) {
                // Mixed second difference of i.i.d. uniforms: high-pass, |n| <= amplitude.
                std::vector<double> u(static_cast<std::size_t>(size + 1) * (size + 1));
                for (auto& v : u) {
                    v = unit(rng);
                }
                auto cell = [&](int y, int x) { return u[static_cast<std::size_t>(y) * (size + 1) + x]; };
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        const int t = label == 0 ? x : y;
                        const double pattern = amplitude * std::cos(std::numbers::pi * (2 * t + 1) / 16.0);
                        const double noise =
                            kSyntheticNoiseAmplitude * (cell(y, x) - cell(y, x + 1) - cell(y + 1, x) + cell(y + 1, x + 1)) / 4.0;
                        img.at(c, y, x) = 128.0 + pattern + noise;
                    }
                }
            }
            images.push_back(std::move(img));
            labels.push_back(label);
        }
    }
    return LabeledDataset(std::move(images), std::move(labels), 2);
}

LabeledDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) {
        throw FormatError("cannot open " + (dir / "manifest.csv").string());
    }
    std::string line;
    if (!std::getline(manifest, line) || line != "file,label") {
        throw FormatError("manifest.csv line 1: expected header \"file,label\"");
    }
    std::vector<ImageTensor> images;
    std::vector<int> labels;
    int max_label = -1;
    int line_no = 1;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw FormatError("manifest.csv line " + std::to_string(line_no) + ": expected file,label");
        }
        const std::string file = line.substr(0, comma);
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(line.substr(comma + 1), &used);
            if (used != line.size() - comma - 1) {
                throw std::invalid_argument("trailing");
            }
        } catch (const std::exception&) {
            throw FormatError("manifest.csv line " + std::to_string(line_no) + ": bad label");
        }
        if (label < 0) {
            throw FormatError("manifest.csv line " + std::to_string(line_no) + ": negative label");
        }
        const auto path = dir / file;
        images.push_back(path.extension() == ".ppm" ? load_ppm(path) : load_raw(path));
        labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    if (images.empty()) {
        throw FormatError("manifest.csv lists no images");
    }
    try {
        return LabeledDataset(std::move(images), std::move(labels), max_label + 1);
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("dataset ") + dir.string() + ": " + e.what());
    }
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "file,label\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img%05zu.raw", i);
        save_raw(dataset.images[i], dir / name);
        manifest << name << ',' << dataset.labels[i] << '\n';
    }
    const std::string text = manifest.str();
    write_all(dir / "manifest.csv", std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace jdl
