#pragma once

#include "illuminorm/image.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace illuminorm {

using Rng = std::mt19937_64;

/// Seat classes of the vehicle-interior label space.
enum SeatClass : int { kEmpty = 0, kInfantSeat = 1, kChildSeat = 2, kAdult = 3 };
inline constexpr int kSeatClassCount = 4;

/// Either a per-seat class tuple or a single categorical id (pose, location).
struct Label {
    enum class Kind { seats, category };

    Kind kind = Kind::seats;
    std::vector<int> seats;
    int category = -1;

    static Label from_seats(std::vector<int> seats);
    static Label from_category(int id);

    bool all_empty() const;
    /// Dense class id: base-4 number over seats, or the category itself.
    int class_id() const;
    /// "3-0-3" for seat labels, "c7" for categories.
    std::string to_string() const;
    static Label parse(std::string_view text);

    friend auto operator<=>(const Label&, const Label&) = default;
    friend bool operator==(const Label&, const Label&) = default;
};

/// Number of seats whose class differs. Throws ContractError for mismatched labels.
int hamming_distance(const Label& a, const Label& b);

/// All kSeatClassCount^seat_count seat labels in class_id order.
std::vector<Label> enumerate_seat_labels(int seat_count);

enum class Split { train, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SceneRecord {
    int scene_id = 0;
    Label label;
    std::vector<Image> variants;

    int variant_count() const { return static_cast<int>(variants.size()); }
    friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

/// Contents of the top-level meta.json.
struct DatasetMeta {
    int seat_count = 3;
    std::vector<std::string> class_names{"empty", "infant_seat", "child_seat", "adult"};
    int height = 64;
    int width = 64;
    int channels = 1;
    std::uint64_t seed = 0;
    std::string balance = "balanced";

    friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    Split split = Split::train;
    DatasetMeta meta;
    std::vector<SceneRecord> scenes;

    int image_count() const;
    /// Throws ContractError if no scene has this id.
    const SceneRecord& scene(int scene_id) const;
    std::size_t index_of(int scene_id) const;

    /// Equality of everything but the root directory.
    bool same_content(const DatasetManifest& other) const;
};

std::filesystem::path scene_directory(const std::filesystem::path& root, Split split, int scene_id);
std::filesystem::path variant_path(const std::filesystem::path& root, Split split, int scene_id, int variant);

/// Loads <root>/<split>/scene_<k>/{variant_<j>.png,label.json} plus <root>/meta.json.
///
/// Scenes are ordered by ascending id. Throws DataError naming the offending scene for a
/// missing label, an unreadable image, shape disagreement, or fewer than two variants.
DatasetManifest load_manifest(const std::filesystem::path& root, Split split);

/// Writes the split directory and meta.json under root. Existing scene files are overwritten.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);

void write_meta(const DatasetMeta& meta, const std::filesystem::path& root);
DatasetMeta read_meta(const std::filesystem::path& root);

/// Input/target variant indices for one scene.
struct PairSample {
    int scene_id = 0;
    int input_variant = 0;
    int target_variant = 0;

    friend bool operator==(const PairSample&, const PairSample&) = default;
};

/// Uniform over ordered (a, b) with a != b. Throws ContractError for fewer than two variants.
PairSample sample_pair(const SceneRecord& scene, Rng& rng);

struct TripletSample {
    PairSample anchor;
    PairSample positive;
    PairSample negative;
};

/// Positive/negative predicates over labels used to pick triplet partners.
struct TripletPolicy {
    std::string name;
    std::function<bool(const Label& anchor)> is_valid_anchor;
    std::function<bool(const Label& anchor, const Label& candidate)> is_positive;
    std::function<bool(const Label& anchor, const Label& candidate)> is_negative;

    /// Same seat tuple is positive; a single changed seat is negative; all-empty never anchors
    /// or serves as a negative.
    static TripletPolicy seat();
    /// Same category positive, different category negative (head pose).
    static TripletPolicy pose();
    /// Same category positive, different category negative (camera location).
    static TripletPolicy location();
    static TripletPolicy by_name(std::string_view name);
};

/// Draws positive and negative scenes for the anchor and an independent pair for each of the three.
///
/// Throws SamplingError naming the failed predicate if the anchor is ineligible or no scene
/// satisfies the positive or negative predicate.
TripletSample sample_triplet(const DatasetManifest& manifest, int anchor_scene_id,
                             const TripletPolicy& policy, Rng& rng);

/// Scene ids of a (positive, negative) pair for the anchor; same errors as sample_triplet.
std::pair<int, int> sample_triplet_scenes(const DatasetManifest& manifest, int anchor_scene_id,
                                          const TripletPolicy& policy, Rng& rng);

/// True if sample_triplet can succeed for this anchor.
bool can_anchor(const DatasetManifest& manifest, int anchor_scene_id, const TripletPolicy& policy);

enum class AugmentKind { gain, bias, gradient, noise, flip, rotate, crop, translate };

struct AugmentOp {
    AugmentKind kind = AugmentKind::gain;
    double low = 1.0;
    double high = 1.0;
};

/// Photometric augmentation recipe, e.g. "gain:0.7:1.3,bias:-0.1:0.1,noise:0:0.02".
struct AugmentSpec {
    std::vector<AugmentOp> ops;

    bool is_photometric() const;
    std::string to_string() const;
    /// Throws ConfigError on malformed text or unknown transforms.
    static AugmentSpec parse(std::string_view text);
};

enum class AugmentMode { both, reverse_denoise };
AugmentMode parse_augment_mode(std::string_view text);

/// Applies each op once with freshly drawn parameters, clipping to [0, 1].
Image augment(const Image& image, const AugmentSpec& spec, Rng& rng);

/// mode both: two independent augmentations; reverse_denoise: (clean input, augmented target).
/// Throws ConfigError if the spec contains a geometric transform.
std::pair<Image, Image> augment_pair(const Image& image, const AugmentSpec& spec, AugmentMode mode, Rng& rng);

}  // namespace illuminorm
