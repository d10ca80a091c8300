#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pca/augment.hpp"
#include "pca/image.hpp"
#include "pca/rng.hpp"
#include "pca/tensor.hpp"
#include "pca/threading.hpp"

namespace pca::data {

struct ManifestRecord {
    std::string image;  // path, joined onto the manifest root when loading pixels
    std::string label;
    int class_index = 0;
    std::uint64_t id = 0;  // source row id; duplicates made by up-sampling share it
};

struct Manifest {
    std::vector<std::string> class_names;
    std::vector<ManifestRecord> records;
    std::string image_root;

    int classes() const { return static_cast<int>(class_names.size()); }

    std::vector<int> counts() const {
        std::vector<int> n(class_names.size(), 0);
        for (const auto& r : records) ++n[static_cast<std::size_t>(r.class_index)];
        return n;
    }

    std::string image_path(const ManifestRecord& r) const {
        if (image_root.empty() || r.image.empty() || r.image.front() == '/') return r.image;
        return image_root + "/" + r.image;
    }

    void validate() const {
        for (const auto& r : records) {
            if (r.class_index < 0 || r.class_index >= classes())
                throw std::runtime_error("manifest: class index out of range for " + r.image);
            if (class_names[static_cast<std::size_t>(r.class_index)] != r.label)
                throw std::runtime_error("manifest: label/index mismatch for " + r.image);
        }
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline bool parse_onehot_cell(const std::string& cell, const std::string& context) {
    // ISIC-style ground truth stores one-hot flags as 0.0 / 1.0
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("manifest: non-numeric one-hot cell '" + cell + "' " + context);
    }
    if (used != cell.size() || (v != 0.0 && v != 1.0))
        throw std::runtime_error("manifest: one-hot cell must be 0 or 1, got '" + cell + "' " + context);
    return v == 1.0;
}

}  // namespace detail

/// Parses manifest CSV text. Two header forms are accepted:
///   image,label            labels free-form; class order = sorted label set
///   image,<c1>,<c2>,...    one-hot flags; class order = column order
/// When expected_classes is non-empty it fixes the class set and order, and
/// any other label is rejected.
inline Manifest parse_manifest(const std::string& text, const std::string& image_root = "",
                               const std::vector<std::string>& expected_classes = {}) {
    std::vector<std::string> lines;
    {
        std::stringstream ss(text);
        std::string line;
        while (std::getline(ss, line))
            if (!line.empty() && line != "\r") lines.push_back(line);
    }
    if (lines.empty()) throw std::runtime_error("manifest: empty CSV");

    const std::vector<std::string> header = detail::split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "image")
        throw std::runtime_error("manifest: header must start with 'image' and name at least one more column");
    const bool label_form = header.size() == 2 && header[1] == "label";

    Manifest m;
    m.image_root = image_root;
    std::set<std::string> seen;
    if (label_form) {
        std::vector<std::pair<std::string, std::string>> rows;
        std::set<std::string> labels;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto f = detail::split_csv_line(lines[i]);
            if (f.size() != 2) throw std::runtime_error("manifest: expected 2 fields at line " + std::to_string(i + 1));
            if (!seen.insert(f[0]).second) throw std::runtime_error("manifest: duplicate image id " + f[0]);
            rows.emplace_back(f[0], f[1]);
            labels.insert(f[1]);
        }
        m.class_names = expected_classes.empty()
                            ? std::vector<std::string>(labels.begin(), labels.end())  // set is sorted
                            : expected_classes;
        std::map<std::string, int> index;
        for (std::size_t c = 0; c < m.class_names.size(); ++c) index[m.class_names[c]] = static_cast<int>(c);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto it = index.find(rows[i].second);
            if (it == index.end()) throw std::runtime_error("manifest: unknown label '" + rows[i].second + "'");
            m.records.push_back({rows[i].first, rows[i].second, it->second, i});
        }
    } else {
        m.class_names.assign(header.begin() + 1, header.end());
        if (!expected_classes.empty() && m.class_names != expected_classes)
            throw std::runtime_error("manifest: one-hot columns do not match the expected class list");
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto f = detail::split_csv_line(lines[i]);
            if (f.size() != header.size())
                throw std::runtime_error("manifest: expected " + std::to_string(header.size()) +
                                         " fields at line " + std::to_string(i + 1));
            if (!seen.insert(f[0]).second) throw std::runtime_error("manifest: duplicate image id " + f[0]);
            const std::string context = "at line " + std::to_string(i + 1);
            int positive = -1;
            for (std::size_t c = 1; c < f.size(); ++c) {
                if (detail::parse_onehot_cell(f[c], context)) {
                    if (positive >= 0) throw std::runtime_error("manifest: multiple positive classes " + context);
                    positive = static_cast<int>(c - 1);
                }
            }
            if (positive < 0) throw std::runtime_error("manifest: no positive class " + context);
            m.records.push_back(
                {f[0], m.class_names[static_cast<std::size_t>(positive)], positive, i - 1});
        }
    }
    return m;
}

inline Manifest load_manifest(const std::string& csv_path, const std::string& image_root = "",
                              const std::vector<std::string>& expected_classes = {}) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw std::runtime_error("manifest: cannot open " + csv_path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), image_root, expected_classes);
}

/// Writes the label-column form.
inline void save_manifest(const Manifest& m, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("manifest: cannot write " + csv_path);
    out << "image,label\n";
    for (const auto& r : m.records) out << r.image << "," << r.label << "\n";
    if (!out) throw std::runtime_error("manifest: short write to " + csv_path);
}

/// Largest-remainder apportionment of n items over the given ratios.
/// Ties and fp noise resolve in favour of earlier ratios, so with (0.6,0.2,0.2)
/// leftovers go train, then val, then test.
inline std::vector<int> apportion(int n, const std::vector<double>& ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r < 0.0) throw std::invalid_argument("apportion: negative ratio");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("apportion: ratios must sum to 1");

    const std::size_t k = ratios.size();
    std::vector<int> base(k);
    std::vector<double> frac(k);
    int assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double exact = ratios[i] * n;
        base[i] = static_cast<int>(std::floor(exact + 1e-9));  // absorb fp error at integers
        frac[i] = exact - base[i];
        assigned += base[i];
    }
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&frac](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t j = 0; assigned < n; ++j) base[order[j % k]] += 1, ++assigned;
    for (std::size_t j = k; assigned > n; --j) {
        if (base[order[j - 1]] > 0) base[order[j - 1]] -= 1, --assigned;
    }
    return base;
}

/// Per-class shuffled partition into train/val/test. Each class's split sizes
/// come from largest-remainder apportionment of its count, so they are within
/// one of the exact ratio shares. Deterministic in (seed, manifest order).
inline std::array<Manifest, 3> stratified_split(const Manifest& m,
                                                const std::array<double, 3>& ratios = {0.6, 0.2, 0.2},
                                                std::uint64_t seed = 0) {
    const std::vector<int> counts = m.counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < 3)
            throw std::runtime_error("stratified_split: class '" + m.class_names[c] + "' has " +
                                     std::to_string(counts[c]) + " samples, need at least 3");

    std::array<Manifest, 3> out;
    for (auto& s : out) {
        s.class_names = m.class_names;
        s.image_root = m.image_root;
    }
    for (int c = 0; c < m.classes(); ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < m.records.size(); ++i)
            if (m.records[i].class_index == c) idx.push_back(i);
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
        rng.shuffle(idx);
        const std::vector<int> sizes = apportion(static_cast<int>(idx.size()), {ratios[0], ratios[1], ratios[2]});
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s)
            for (int j = 0; j < sizes[static_cast<std::size_t>(s)]; ++j)
                out[static_cast<std::size_t>(s)].records.push_back(m.records[idx[pos++]]);
    }
    return out;
}

/// Balances class counts up to the majority by whole-set repetition plus a
/// deterministic prefix: counts {5,2} extend the minority as 2+2+first 1.
/// Original records are kept in place; duplicates are appended per class in
/// class order.
inline Manifest upsample_minority(const Manifest& m) {
    if (m.records.empty()) throw std::runtime_error("upsample_minority: empty manifest");
    std::vector<std::vector<std::size_t>> per_class(static_cast<std::size_t>(m.classes()));
    for (std::size_t i = 0; i < m.records.size(); ++i)
        per_class[static_cast<std::size_t>(m.records[i].class_index)].push_back(i);
    std::size_t target = 0;
    for (const auto& idx : per_class) target = std::max(target, idx.size());

    Manifest out = m;
    for (const auto& idx : per_class) {
        if (idx.empty()) continue;  // absent classes cannot be repeated into existence
        for (std::size_t have = idx.size(); have < target; ++have)
            out.records.push_back(m.records[idx[(have - idx.size()) % idx.size()]]);
    }
    return out;
}

// --- sample loading ---

struct Sample {
    Tensor<float> pixels;  // (1,h,w,3) in [0,1]
    int class_index = 0;
    std::uint64_t source_id = 0;
    aug::AugmentParams augmentation;
};

struct LoadOptions {
    int target_h = 32;
    int target_w = 32;
    bool augment = false;
    std::uint64_t seed = 0;  // global seed; per-sample draws mix in entry index and epoch
    int epoch = 0;
};

/// Reads one record: decode, scale to [0,1], resize, then (optionally) one
/// augmentation drawn from mix(seed, entry index, epoch). Seeding by entry
/// index gives up-sampled duplicates independent draws.
inline Sample load_sample(const Manifest& m, std::size_t entry, const LoadOptions& opt) {
    const ManifestRecord& r = m.records.at(entry);
    Sample s;
    s.class_index = r.class_index;
    s.source_id = r.id;
    s.pixels = aug::resize_bilinear(image::to_float(image::read_image(m.image_path(r))), opt.target_h, opt.target_w);
    if (opt.augment) {
        Rng rng(aug::sample_seed(opt.seed, entry, static_cast<std::uint64_t>(opt.epoch)));
        s.augmentation = aug::AugmentParams::draw(rng);
        s.pixels = aug::apply_augment(s.pixels, s.augmentation);
    }
    return s;
}

struct Batch {
    Tensor<float> x;  // (n,h,w,3)
    std::vector<int> labels;
};

/// Loads the given entries in parallel; results are position-stable so worker
/// count never changes the batch.
inline Batch load_batch(const Manifest& m, const std::vector<std::size_t>& entries, const LoadOptions& opt) {
    Batch b;
    b.x = Tensor<float>(Shape(static_cast<int>(entries.size()), opt.target_h, opt.target_w, 3));
    b.labels.assign(entries.size(), 0);
    std::vector<Sample> samples(entries.size());
    parallel_for(static_cast<int>(entries.size()),
                 [&](int i) { samples[static_cast<std::size_t>(i)] = load_sample(m, entries[static_cast<std::size_t>(i)], opt); });
    const std::size_t stride = static_cast<std::size_t>(opt.target_h) * opt.target_w * 3;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::copy(samples[i].pixels.data(), samples[i].pixels.data() + stride, b.x.data() + i * stride);
        b.labels[i] = samples[i].class_index;
    }
    return b;
}

}  // namespace pca::data
