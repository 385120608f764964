#pragma once

#include "zsdg/embeddings.hpp"
#include "zsdg/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace zsdg {

struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> pixels;  // height x width x channels, row-major

    friend bool operator==(const Image&, const Image&) = default;
};

/// n images of identical geometry with labels indexing `classes`.
class LabeledImageSet {
public:
    LabeledImageSet() = default;
    LabeledImageSet(std::size_t height, std::size_t width, std::size_t channels,
                    std::vector<std::string> classes);

    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t channels() const { return channels_; }
    std::size_t image_size() const { return height_ * width_ * channels_; }

    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<std::size_t>& labels() const { return labels_; }
    const std::string& label_name(std::size_t i) const { return classes_[labels_[i]]; }
    std::size_t class_index(const std::string& name) const;

    std::span<const double> pixels(std::size_t i) const;
    Image image(std::size_t i) const;
    const std::vector<double>& data() const { return data_; }

    void add(std::span<const double> pixels, std::size_t label);
    void add(const Image& image, std::size_t label);

    /// Images whose label is in `classes`, relabelled against that list
    /// (which becomes the new vocabulary). Order of the survivors is kept.
    LabeledImageSet restrict_to(std::span<const std::string> classes) const;
    /// Subset by explicit indices, same vocabulary.
    LabeledImageSet select(std::span<const std::size_t> indices) const;

    /// Checks labels against the vocabulary and pixels against [0, 1].
    void validate() const;

    friend bool operator==(const LabeledImageSet&, const LabeledImageSet&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 1;
    std::vector<std::string> classes_;
    std::vector<std::size_t> labels_;
    std::vector<double> data_;
};

struct Domain {
    std::string tag;
    double angle = 0.0;
    LabeledImageSet images;
};

struct Setting {
    std::string name;
    std::vector<std::string> unseen;
};

/// A leave-one-domain-out universe: all domains, the seen/unseen partition
/// and which domain is held out.
struct DomainSet {
    std::vector<Domain> domains;
    std::vector<std::string> seen;
    std::vector<std::string> unseen;
    std::size_t target = 0;

    void validate() const;
};

/// What a single run trains and evaluates on.
struct SettingSplit {
    std::vector<Domain> train;  // non-target domains, seen classes only
    LabeledImageSet eval_dg;    // target domain, seen classes
    LabeledImageSet eval_zsdg;  // target domain, unseen classes
    std::vector<std::string> seen;
    std::vector<std::string> unseen;
    std::size_t target = 0;
};

// --- file formats ---------------------------------------------------------

/// "index<TAB>name" per line; result is indexed by label value.
std::vector<std::string> read_class_map(const std::filesystem::path& path);

LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path,
                         const std::vector<std::string>& class_names);

/// CIFAR binary batches. With two label bytes (CIFAR-100) the second, fine
/// label is used.
LabeledImageSet load_cifar_binary(std::span<const std::filesystem::path> paths,
                                  const std::vector<std::string>& class_names,
                                  std::size_t label_bytes = 1);

std::vector<std::string> fmnist_classes();
std::vector<std::string> cifar10_classes();
std::vector<std::string> cifar100_classes();
std::vector<Setting> builtin_settings(const std::string& dataset);

// --- domain construction --------------------------------------------------

/// Counter-clockwise rotation about the image centre by inverse mapping with
/// bilinear interpolation. Same canvas; samples outside the source are 0.
Image rotate_image(const Image& image, double degrees);
/// Centre `image` on a zero canvas of the given size.
Image pad_image(const Image& image, std::size_t height, std::size_t width);
/// Side length used by the enlarge-canvas option: ceil(side * sqrt(2)).
std::size_t enlarged_side(std::size_t side);

std::vector<double> default_angles();

/// One domain per angle, tagged D0, D1, ... and index-aligned with `base`.
std::vector<Domain> build_rotated_domains(const LabeledImageSet& base,
                                          std::span<const double> angles,
                                          bool enlarge_canvas = false);

/// Keeps at most `cap` images per class, chosen by a seeded shuffle; the
/// survivors keep their original relative order. A cap of 0 keeps everything.
LabeledImageSet cap_per_class(const LabeledImageSet& set, std::size_t cap, std::uint64_t seed);

DomainSet make_domain_set(std::vector<Domain> domains, const Setting& setting,
                          std::size_t target);

SettingSplit apply_setting(const std::vector<Domain>& domains, const Setting& setting,
                           std::size_t target);

/// For domains that are not index-aligned: pairs every image of the first
/// domain with a random same-class image of each other domain.
std::vector<Domain> align_domains_by_class(const std::vector<Domain>& domains,
                                           std::uint64_t seed);
bool domains_aligned(const std::vector<Domain>& domains);

// --- batching -------------------------------------------------------------

struct Batch {
    Tensor inputs;                     // batch x image_size
    std::vector<std::size_t> labels;
    std::vector<std::size_t> indices;  // positions in the source set
};

Batch gather_batch(const LabeledImageSet& set, std::span<const std::size_t> indices);

/// Seeded Fisher-Yates shuffle per epoch; the final short batch is kept.
class BatchStream {
public:
    BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed);

    /// Index batches for the next epoch.
    std::vector<std::vector<std::size_t>> next_epoch();
    std::size_t batches_per_epoch() const;

private:
    std::size_t count_;
    std::size_t batch_size_;
    std::mt19937_64 rng_;
};

/// One epoch of materialised batches drawn from `stream`.
std::vector<Batch> make_batches(const LabeledImageSet& set, BatchStream& stream);

// --- synthetic benchmark --------------------------------------------------

struct SyntheticSpec {
    std::size_t classes = 6;
    std::size_t per_class = 50;
    std::size_t side = 16;
    double noise = 0.05;
    std::vector<double> angles = default_angles();
    std::uint64_t seed = 0;
};

struct SyntheticUniverse {
    std::vector<Domain> domains;
    EmbeddingTable embeddings{8};
    std::vector<Setting> settings;
};

/// Glyph classes composed from stroke primitives; each class embedding is the
/// sum of its primitives' unit vectors in an 8-d space.
SyntheticUniverse make_synthetic_zsdg(const SyntheticSpec& spec);
std::size_t synthetic_class_limit();

}  // namespace zsdg
