#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lmbis/image.hpp"
#include "lmbis/tensor.hpp"
#include "lmbis/train.hpp"
#include "lmbis/transforms.hpp"

namespace lmbis {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kTargetSize = 512;

// Augmentation grid: 19 rotations (-90..90 step 10) x 2 contrast factors
// (0.9, 1.1), rotation-major ordering.
inline constexpr int kAugmentCount = 38;

// Key-value text file next to a directory tree of
//   <root>/images/  <root>/gt/  [<root>/fov/]
struct DatasetManifest {
    std::string name;
    std::filesystem::path root;
    std::string image_format;  // tif | ppm | jpg | png
    int native_width = 0;
    int native_height = 0;
    float fov_degrees = 0.0f;
    bool has_fov_masks = false;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;

    static DatasetManifest load(const std::filesystem::path& path);
    void validate() const;
};

struct Sample {
    Tensor image;  // (1,3,512,512), values in [0,1]
    Mask gt;       // 512x512, {0,1}, vessel pixels inside the FOV
    Mask fov;      // 512x512, {0,1}
    std::string source_id;
    std::string aug_tag;  // empty for the base sample
};

// Decodes, resizes to 512x512 (bilinear image / nearest masks), binarizes the
// ground truth at 128/255, and loads or synthesizes the FOV.
Sample load_sample(const DatasetManifest& manifest, const std::string& id,
                   bool fov_restrict = true);

// Deterministic carve-out: the tail of the train list becomes the validation
// split. Test-split ids never appear in either list.
struct SplitLists {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

SplitLists train_val_split(const DatasetManifest& manifest, float val_fraction);

// Deterministic variant: index 0..37 maps to (rotation, contrast).
Sample augment_variant(const Sample& base, int index);

std::vector<Sample> augment_grid(const Sample& base);

// Conversion to network tensors (one-hot ground truth over num_classes).
TrainSample to_train_sample(const Sample& sample, int num_classes);

// Optionally downscales first: desk-scale runs train below 512.
TrainSample to_train_sample(const Sample& sample, int num_classes, int resize_to);

}  // namespace lmbis
