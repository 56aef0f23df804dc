#include "lmbis/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace lmbis {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ids(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

const std::vector<std::string>& probe_extensions() {
    static const std::vector<std::string> exts = {".png", ".ppm", ".pgm", ".tif",
                                                  ".tiff", ".jpg", ".jpeg"};
    return exts;
}

std::filesystem::path find_mask_file(const std::filesystem::path& dir,
                                     const std::string& id) {
    for (const auto& ext : probe_extensions()) {
        auto p = dir / (id + ext);
        if (std::filesystem::exists(p)) return p;
    }
    return {};
}

}  // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());

    DatasetManifest m;
    m.root = path.parent_path();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("manifest " + path.string() + ": line " +
                            std::to_string(lineno) + " is not key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "name") m.name = value;
        else if (key == "format") m.image_format = value;
        else if (key == "native_width") m.native_width = std::stoi(value);
        else if (key == "native_height") m.native_height = std::stoi(value);
        else if (key == "fov_degrees") m.fov_degrees = std::strtof(value.c_str(), nullptr);
        else if (key == "has_fov_masks") m.has_fov_masks = (value == "true" || value == "1");
        else if (key == "train") m.train_ids = split_ids(value);
        else if (key == "test") m.test_ids = split_ids(value);
        else if (key == "root") m.root = path.parent_path() / value;
        else
            throw DataError("manifest " + path.string() + ": unknown key '" + key + "'");
    }
    m.validate();
    return m;
}

void DatasetManifest::validate() const {
    if (name.empty()) throw DataError("manifest: missing name");
    static const std::set<std::string> formats = {"tif", "tiff", "ppm", "jpg", "jpeg", "png"};
    if (!formats.count(image_format))
        throw DataError("manifest: unsupported format '" + image_format + "'");
    if (train_ids.empty()) throw DataError("manifest: empty train split");

    std::set<std::string> train(train_ids.begin(), train_ids.end());
    if (train.size() != train_ids.size())
        throw DataError("manifest: duplicate ids in train split");
    for (const auto& id : test_ids)
        if (train.count(id))
            throw DataError("manifest: id '" + id + "' appears in both splits");

    // Known benchmark layouts have fixed split sizes.
    struct Known {
        const char* name;
        std::size_t train, test;
    };
    static constexpr Known known[] = {{"DRIVE", 20, 20}, {"STARE", 16, 4}, {"CHASE", 20, 8}};
    for (const auto& k : known) {
        if (name == k.name &&
            (train_ids.size() != k.train || test_ids.size() != k.test))
            throw DataError("manifest: " + name + " must declare " + std::to_string(k.train) +
                            "/" + std::to_string(k.test) + " train/test images");
    }
}

Sample load_sample(const DatasetManifest& manifest, const std::string& id,
                   bool fov_restrict) {
    std::string ext = manifest.image_format;
    const auto image_path = manifest.root / "images" / (id + "." + ext);
    if (!std::filesystem::exists(image_path))
        throw DataError("missing image file: " + image_path.string());

    const auto gt_path = find_mask_file(manifest.root / "gt", id);
    if (gt_path.empty())
        throw DataError("missing ground truth for id '" + id + "' under " +
                        (manifest.root / "gt").string());

    ImageU8 raw;
    ImageU8 gt_raw;
    try {
        raw = decode_image(image_path);
        gt_raw = decode_image(gt_path);
    } catch (const IoError& e) {
        throw DataError(e.what());
    }
    if (raw.width != gt_raw.width || raw.height != gt_raw.height)
        throw DataError("image/ground-truth dimensions differ for id '" + id + "'");

    Sample s;
    s.source_id = id;
    s.image = resize_bilinear(image_to_tensor(raw), kTargetSize, kTargetSize);
    s.gt = resize_nearest(mask_from_image(gt_raw), kTargetSize, kTargetSize);

    if (!fov_restrict) {
        s.fov = Mask(kTargetSize, kTargetSize);
        std::fill(s.fov.v.begin(), s.fov.v.end(), 1);
        return s;
    }
    if (manifest.has_fov_masks) {
        const auto fov_path = find_mask_file(manifest.root / "fov", id);
        if (fov_path.empty())
            throw DataError("manifest declares FOV masks but none found for id '" + id + "'");
        ImageU8 fov_raw;
        try {
            fov_raw = decode_image(fov_path);
        } catch (const IoError& e) {
            throw DataError(e.what());
        }
        s.fov = resize_nearest(mask_from_image(fov_raw), kTargetSize, kTargetSize);
    } else {
        s.fov = make_fov(s.image);
    }

    // vessel pixels outside the FOV are not evaluated anywhere
    for (std::size_t i = 0; i < s.gt.v.size(); ++i) s.gt.v[i] &= s.fov.v[i];
    return s;
}

SplitLists train_val_split(const DatasetManifest& manifest, float val_fraction) {
    if (!(val_fraction > 0.0f && val_fraction < 1.0f))
        throw std::invalid_argument("train_val_split: val_fraction must be in (0,1)");
    SplitLists s;
    s.train = manifest.train_ids;
    if (s.train.size() < 2) {
        s.val = s.train;  // single-image smoke runs validate on the train image
        return s;
    }
    std::size_t val_count = static_cast<std::size_t>(
        std::lround(val_fraction * static_cast<double>(s.train.size())));
    val_count = std::clamp<std::size_t>(val_count, 1, s.train.size() - 1);
    s.val.assign(s.train.end() - val_count, s.train.end());
    s.train.resize(s.train.size() - val_count);
    return s;
}

Sample augment_variant(const Sample& base, int index) {
    if (index < 0 || index >= kAugmentCount)
        throw std::invalid_argument("augment_variant: index must be in [0, 38)");
    const int rotation = -90 + 10 * (index / 2);
    const float contrast = (index % 2 == 0) ? 0.9f : 1.1f;

    Sample out;
    out.source_id = base.source_id;
    out.aug_tag = "rot" + std::to_string(rotation) + "_c" + (index % 2 == 0 ? "0.9" : "1.1");
    out.image = contrast_adjust(rotate_bilinear(base.image, rotation), contrast);
    out.gt = rotate_nearest(base.gt, rotation);
    out.fov = rotate_nearest(base.fov, rotation);
    return out;
}

std::vector<Sample> augment_grid(const Sample& base) {
    std::vector<Sample> out;
    out.reserve(kAugmentCount);
    for (int i = 0; i < kAugmentCount; ++i) out.push_back(augment_variant(base, i));
    return out;
}

TrainSample to_train_sample(const Sample& sample, int num_classes) {
    TrainSample t;
    t.source_id = sample.source_id;
    t.image = sample.image;

    const int h = sample.image.height(), w = sample.image.width();
    t.gt_onehot = Tensor(1, num_classes, h, w);
    t.fov = Tensor(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool vessel = sample.gt.at(y, x) != 0;
            t.gt_onehot.at(0, vessel ? kVesselChannel : 0, y, x) = 1.0f;
            t.fov.at(0, 0, y, x) = sample.fov.at(y, x) ? 1.0f : 0.0f;
        }
    }
    return t;
}

TrainSample to_train_sample(const Sample& sample, int num_classes, int resize_to) {
    if (resize_to == sample.image.height() && resize_to == sample.image.width())
        return to_train_sample(sample, num_classes);
    Sample scaled;
    scaled.source_id = sample.source_id;
    scaled.aug_tag = sample.aug_tag;
    scaled.image = resize_bilinear(sample.image, resize_to, resize_to);
    scaled.gt = resize_nearest(sample.gt, resize_to, resize_to);
    scaled.fov = resize_nearest(sample.fov, resize_to, resize_to);
    for (std::size_t i = 0; i < scaled.gt.v.size(); ++i) scaled.gt.v[i] &= scaled.fov.v[i];
    return to_train_sample(scaled, num_classes);
}

}  // namespace lmbis
