#include "jdl/qtable.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "jdl/error.hpp"

namespace jdl {

namespace {

constexpr int kTableVersion = 1;

// Sum that does not depend on the order the terms arrive in.
double order_free_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) {
        acc += t;
    }
    return acc;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string table_json(const Table& t) {
    std::string out = "[";
    for (std::size_t i = 0; i < t.size(); ++i) {
        out += (i == 0 ? "" : ", ") + number(t[i]);
    }
    return out + "]";
}

// 1-based line of the first occurrence of "key" in the text, or 0.
int line_of_key(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) {
        return 0;
    }
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

[[noreturn]] void field_error(const std::string& text, const std::string& field, const std::string& what) {
    const int line = line_of_key(text, field);
    throw FormatError("tables: field \"" + field + "\"" + (line > 0 ? " (line " + std::to_string(line) + ")" : "") +
                      ": " + what);
}

const nlohmann::json& require_field(const nlohmann::json& j, const std::string& field) {
    if (!j.contains(field)) {
        throw FormatError("tables: missing field \"" + field + "\"");
    }
    return j.at(field);
}

Table read_table(const nlohmann::json& j, const std::string& text, const std::string& field) {
    const auto& arr = require_field(j, field);
    if (!arr.is_array() || arr.size() != kBlockArea) {
        field_error(text, field, "expected an array of 64 numbers");
    }
    Table t{};
    for (std::size_t i = 0; i < kBlockArea; ++i) {
        if (!arr[i].is_number()) {
            field_error(text, field, "entry " + std::to_string(i) + " is not a number");
        }
        t[i] = arr[i].get<double>();
    }
    return t;
}

}  // namespace

int levels_for_bits(int bits) {
    if (bits < 1 || bits > 30) {
        throw ArgumentError("bit depth must be in [1, 30]");
    }
    return 1 << (bits - 1);
}

void QuantTables::validate() const {
    auto check = [](const Table& t, const char* name, double floor, bool inclusive) {
        for (std::size_t m = 0; m < t.size(); ++m) {
            const bool ok = std::isfinite(t[m]) && (inclusive ? t[m] >= floor : t[m] > floor);
            if (!ok) {
                throw ValidationError(std::string(name) + "[" + std::to_string(m) + "] = " + number(t[m]) +
                                      " violates the positivity constraint");
            }
        }
    };
    check(q_y, "q_y", kQMin, true);
    check(q_c, "q_c", kQMin, true);
    check(alpha_y, "alpha_y", 0.0, false);
    check(alpha_c, "alpha_c", 0.0, false);
    if (levels < 1) {
        throw ValidationError("L must be >= 1");
    }
    if (hbar && !(*hbar > 0.0 && std::isfinite(*hbar))) {
        throw ValidationError("hbar must be positive");
    }
}

void QuantTables::clamp_q() {
    for (auto* t : {&q_y, &q_c}) {
        for (double& v : *t) {
            v = std::max(v, kQMin);
        }
    }
}

QuantTables init_magnitude(const LabeledDataset& dataset, int bits, SubsamplingMode mode,
                           MagnitudeDenominator denominator, double alpha) {
    if (dataset.images.empty()) {
        throw ArgumentError("init_magnitude: empty dataset");
    }
    QuantTables t;
    t.bits = bits;
    t.levels = levels_for_bits(bits);
    const double denom = denominator == MagnitudeDenominator::HalfRange ? std::sqrt(std::ldexp(1.0, bits - 1))
                                                                        : std::sqrt(std::ldexp(1.0, bits) - 1.0);
    // Per-image partial sums, per group and frequency.
    std::vector<std::vector<double>> luma(kBlockArea), chroma(kBlockArea);
    int luma_blocks = 0;
    int chroma_blocks = 0;
    for (const auto& img : dataset.images) {
        const DctCoefficients z = analyze(pad_to_block_multiple(img), mode);
        luma_blocks = z.channels[0].block_count();
        chroma_blocks = z.channels[1].block_count();
        for (int m = 0; m < kBlockArea; ++m) {
            double ly = 0.0;
            for (int n = 0; n < luma_blocks; ++n) {
                ly += std::abs(z.channels[0].at(m, n));
            }
            double lc = 0.0;
            for (int l = 1; l < 3; ++l) {
                for (int n = 0; n < chroma_blocks; ++n) {
                    lc += std::abs(z.channels[l].at(m, n));
                }
            }
            luma[m].push_back(ly);
            chroma[m].push_back(lc);
        }
    }
    const double n_images = static_cast<double>(dataset.images.size());
    for (int m = 0; m < kBlockArea; ++m) {
        t.q_y[m] = 2.0 * order_free_sum(luma[m]) / (n_images * luma_blocks * denom);
        t.q_c[m] = order_free_sum(chroma[m]) / (n_images * chroma_blocks * denom);
    }
    t.alpha_y.fill(alpha);
    t.alpha_c.fill(alpha);
    t.clamp_q();
    return t;
}

QuantTables init_ones(int bits, double alpha) {
    QuantTables t;
    t.bits = bits;
    t.levels = levels_for_bits(bits);
    t.q_y.fill(1.0);
    t.q_c.fill(1.0);
    t.alpha_y.fill(alpha);
    t.alpha_c.fill(alpha);
    return t;
}

QuantTables init_from_sensitivity(const Sensitivity& sensitivity, const QuantTables& magnitude) {
    QuantTables t = magnitude;
    auto anchor = [](const Table& s, const Table& mag, Table& out) {
        std::vector<double> inv;
        for (double v : s) {
            if (v > 0.0) {
                inv.push_back(1.0 / v);
            }
        }
        if (inv.empty()) {
            out = mag;
            return;
        }
        const double scale = median(std::vector<double>(mag.begin(), mag.end())) / median(inv);
        for (int m = 0; m < kBlockArea; ++m) {
            out[m] = s[m] > 0.0 ? scale / s[m] : mag[m];
        }
    };
    anchor(sensitivity.luma, magnitude.q_y, t.q_y);
    anchor(sensitivity.chroma, magnitude.q_c, t.q_c);
    t.clamp_q();
    return t;
}

QuantTables apply_gradient_scaling(const QuantTables& tables) {
    if (!tables.hbar) {
        throw ArgumentError("apply_gradient_scaling: hbar is not set");
    }
    QuantTables t = tables;
    const double h = *tables.hbar;
    for (int m = 0; m < kBlockArea; ++m) {
        t.alpha_y[m] = h / (t.q_y[m] * t.q_y[m]);
        t.alpha_c[m] = h / (t.q_c[m] * t.q_c[m]);
    }
    return t;
}

std::string tables_to_json(const QuantTables& t) {
    std::ostringstream out;
    out << "{\n";
    out << "  \"version\": " << kTableVersion << ",\n";
    out << "  \"b\": " << t.bits << ",\n";
    out << "  \"L\": " << t.levels << ",\n";
    out << "  \"hbar\": " << (t.hbar ? number(*t.hbar) : "null") << ",\n";
    out << "  \"q_y\": " << table_json(t.q_y) << ",\n";
    out << "  \"q_c\": " << table_json(t.q_c) << ",\n";
    out << "  \"alpha_y\": " << table_json(t.alpha_y) << ",\n";
    out << "  \"alpha_c\": " << table_json(t.alpha_c) << "\n";
    out << "}\n";
    return out.str();
}

QuantTables tables_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("tables: ") + e.what());
    }
    if (!j.is_object()) {
        throw FormatError("tables: top level must be an object");
    }
    const auto& version = require_field(j, "version");
    if (!version.is_number_integer() || version.get<int>() != kTableVersion) {
        field_error(text, "version", "unsupported version");
    }
    QuantTables t;
    const auto& b = require_field(j, "b");
    const auto& L = require_field(j, "L");
    if (!b.is_number_integer()) {
        field_error(text, "b", "expected an integer");
    }
    if (!L.is_number_integer()) {
        field_error(text, "L", "expected an integer");
    }
    t.bits = b.get<int>();
    t.levels = L.get<int>();
    const auto& hbar = require_field(j, "hbar");
    if (!hbar.is_null()) {
        if (!hbar.is_number()) {
            field_error(text, "hbar", "expected a number or null");
        }
        t.hbar = hbar.get<double>();
    }
    t.q_y = read_table(j, text, "q_y");
    t.q_c = read_table(j, text, "q_c");
    t.alpha_y = read_table(j, text, "alpha_y");
    t.alpha_c = read_table(j, text, "alpha_c");
    try {
        t.validate();
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        const std::string field = msg.substr(0, msg.find('['));
        const int line = line_of_key(text, field);
        throw ValidationError("tables" + (line > 0 ? " line " + std::to_string(line) : std::string()) + ": " + msg);
    }
    return t;
}

void save_tables(const QuantTables& tables, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << tables_to_json(tables);
}

QuantTables load_tables(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return tables_from_json(buf.str());
}

}  // namespace jdl
