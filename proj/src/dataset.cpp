#include "illuminorm/dataset.hpp"

#include "illuminorm/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace illuminorm {

namespace fs = std::filesystem;
using nlohmann::json;

Label Label::from_seats(std::vector<int> seats) {
    for (int s : seats)
        if (s < 0 || s >= kSeatClassCount) throw ContractError("seat class out of range: " + std::to_string(s));
    Label label;
    label.kind = Kind::seats;
    label.seats = std::move(seats);
    return label;
}

Label Label::from_category(int id) {
    if (id < 0) throw ContractError("category id must be non-negative");
    Label label;
    label.kind = Kind::category;
    label.category = id;
    return label;
}

bool Label::all_empty() const {
    return kind == Kind::seats && std::all_of(seats.begin(), seats.end(), [](int s) { return s == kEmpty; });
}

int Label::class_id() const {
    if (kind == Kind::category) return category;
    int id = 0;
    for (int s : seats) id = id * kSeatClassCount + s;
    return id;
}

std::string Label::to_string() const {
    if (kind == Kind::category) return "c" + std::to_string(category);
    std::string text;
    for (std::size_t i = 0; i < seats.size(); ++i) {
        if (i) text += '-';
        text += std::to_string(seats[i]);
    }
    return text;
}

Label Label::parse(std::string_view text) {
    auto to_int = [&](std::string_view part) {
        int value = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
        if (ec != std::errc() || ptr != part.data() + part.size())
            throw DataError("malformed label '" + std::string(text) + "'");
        return value;
    };
    if (text.empty()) throw DataError("empty label");
    if (text.front() == 'c') return from_category(to_int(text.substr(1)));
    std::vector<int> seats;
    std::size_t start = 0;
    while (true) {
        const auto dash = text.find('-', start);
        seats.push_back(to_int(text.substr(start, dash - start)));
        if (dash == std::string_view::npos) break;
        start = dash + 1;
    }
    try {
        return from_seats(std::move(seats));
    } catch (const ContractError& e) {
        throw DataError(e.what());
    }
}

int hamming_distance(const Label& a, const Label& b) {
    if (a.kind != Label::Kind::seats || b.kind != Label::Kind::seats || a.seats.size() != b.seats.size())
        throw ContractError("hamming distance needs seat labels of equal length");
    int d = 0;
    for (std::size_t i = 0; i < a.seats.size(); ++i) d += a.seats[i] != b.seats[i];
    return d;
}

std::vector<Label> enumerate_seat_labels(int seat_count) {
    int total = 1;
    for (int i = 0; i < seat_count; ++i) total *= kSeatClassCount;
    std::vector<Label> labels;
    labels.reserve(total);
    for (int id = 0; id < total; ++id) {
        std::vector<int> seats(seat_count);
        int rest = id;
        for (int i = seat_count - 1; i >= 0; --i) {
            seats[i] = rest % kSeatClassCount;
            rest /= kSeatClassCount;
        }
        labels.push_back(Label::from_seats(std::move(seats)));
    }
    return labels;
}

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(text) + "' (expected train or test)");
}

int DatasetManifest::image_count() const {
    int total = 0;
    for (const auto& s : scenes) total += s.variant_count();
    return total;
}

std::size_t DatasetManifest::index_of(int scene_id) const {
    auto it = std::lower_bound(scenes.begin(), scenes.end(), scene_id,
                               [](const SceneRecord& s, int id) { return s.scene_id < id; });
    if (it == scenes.end() || it->scene_id != scene_id)
        throw ContractError("no scene with id " + std::to_string(scene_id));
    return static_cast<std::size_t>(it - scenes.begin());
}

const SceneRecord& DatasetManifest::scene(int scene_id) const { return scenes[index_of(scene_id)]; }

bool DatasetManifest::same_content(const DatasetManifest& other) const {
    return split == other.split && meta == other.meta && scenes == other.scenes;
}

fs::path scene_directory(const fs::path& root, Split split, int scene_id) {
    return root / std::string(to_string(split)) / ("scene_" + std::to_string(scene_id));
}

fs::path variant_path(const fs::path& root, Split split, int scene_id, int variant) {
    return scene_directory(root, split, scene_id) / ("variant_" + std::to_string(variant) + ".png");
}

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("cannot parse " + path.string() + ": " + e.what());
    }
}

void write_json(const json& doc, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

// Parses the integer suffix of "<prefix><k>", or returns -1.
int parse_suffix(const std::string& name, std::string_view prefix, std::string_view suffix = {}) {
    if (name.size() <= prefix.size() + suffix.size() || name.compare(0, prefix.size(), prefix) != 0) return -1;
    if (!suffix.empty() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return -1;
    const std::string_view digits(name.data() + prefix.size(), name.size() - prefix.size() - suffix.size());
    int value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || value < 0) return -1;
    return value;
}

Label label_from_json(const json& doc, const std::string& where) {
    try {
        if (doc.contains("seats")) return Label::from_seats(doc.at("seats").get<std::vector<int>>());
        if (doc.contains("category")) return Label::from_category(doc.at("category").get<int>());
    } catch (const std::exception& e) {
        throw DataError("invalid label in " + where + ": " + e.what());
    }
    throw DataError("label file of " + where + " has neither 'seats' nor 'category'");
}

json label_to_json(const Label& label) {
    if (label.kind == Label::Kind::category) return json{{"category", label.category}};
    return json{{"seats", label.seats}};
}

}  // namespace

void write_meta(const DatasetMeta& meta, const fs::path& root) {
    fs::create_directories(root);
    json doc{{"format_version", 1},
             {"seat_count", meta.seat_count},
             {"class_names", meta.class_names},
             {"image_size", {{"height", meta.height}, {"width", meta.width}, {"channels", meta.channels}}},
             {"seed", meta.seed},
             {"balance", meta.balance}};
    write_json(doc, root / "meta.json");
}

DatasetMeta read_meta(const fs::path& root) {
    const json doc = read_json(root / "meta.json");
    DatasetMeta meta;
    try {
        meta.seat_count = doc.at("seat_count").get<int>();
        meta.class_names = doc.at("class_names").get<std::vector<std::string>>();
        const auto& size = doc.at("image_size");
        meta.height = size.at("height").get<int>();
        meta.width = size.at("width").get<int>();
        meta.channels = size.at("channels").get<int>();
        meta.seed = doc.at("seed").get<std::uint64_t>();
        meta.balance = doc.value("balance", std::string("balanced"));
    } catch (const json::exception& e) {
        throw DataError("malformed meta.json in " + root.string() + ": " + e.what());
    }
    return meta;
}

DatasetManifest load_manifest(const fs::path& root, Split split) {
    DatasetManifest manifest;
    manifest.root = root;
    manifest.split = split;
    manifest.meta = read_meta(root);

    const fs::path split_dir = root / std::string(to_string(split));
    if (!fs::is_directory(split_dir)) throw DataError("missing split directory " + split_dir.string());

    std::vector<int> ids;
    for (const auto& entry : fs::directory_iterator(split_dir)) {
        if (!entry.is_directory()) continue;
        const int id = parse_suffix(entry.path().filename().string(), "scene_");
        if (id >= 0) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());

    for (int id : ids) {
        const fs::path dir = scene_directory(root, split, id);
        const std::string where = "scene " + std::to_string(id) + " (" + dir.string() + ")";
        SceneRecord scene;
        scene.scene_id = id;
        if (!fs::exists(dir / "label.json")) throw DataError("missing label.json for " + where);
        scene.label = label_from_json(read_json(dir / "label.json"), where);
        if (scene.label.kind == Label::Kind::seats &&
            static_cast<int>(scene.label.seats.size()) != manifest.meta.seat_count)
            throw DataError("seat tuple length disagrees with seat_count for " + where);

        std::vector<int> variants;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const int j = parse_suffix(entry.path().filename().string(), "variant_", ".png");
            if (j >= 0) variants.push_back(j);
        }
        std::sort(variants.begin(), variants.end());
        for (std::size_t j = 0; j < variants.size(); ++j)
            if (variants[j] != static_cast<int>(j))
                throw DataError("variant numbering is not contiguous from 0 for " + where);
        if (variants.size() < 2)
            throw DataError(where + " has " + std::to_string(variants.size()) + " variant(s); at least 2 required");

        for (int j : variants) {
            Image image;
            try {
                image = read_png(variant_path(root, split, id, j));
            } catch (const DataError& e) {
                throw DataError("unreadable image in " + where + ": " + e.what());
            }
            if (image.height() != manifest.meta.height || image.width() != manifest.meta.width ||
                image.channels() != manifest.meta.channels)
                throw DataError("image shape of variant " + std::to_string(j) + " in " + where +
                                " disagrees with meta.json");
            scene.variants.push_back(std::move(image));
        }
        manifest.scenes.push_back(std::move(scene));
    }
    if (manifest.scenes.empty()) throw DataError("no scenes found in " + split_dir.string());
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& root) {
    write_meta(manifest.meta, root);
    for (const auto& scene : manifest.scenes) {
        const fs::path dir = scene_directory(root, manifest.split, scene.scene_id);
        fs::create_directories(dir);
        write_json(label_to_json(scene.label), dir / "label.json");
        for (int j = 0; j < scene.variant_count(); ++j)
            write_png(scene.variants[j], variant_path(root, manifest.split, scene.scene_id, j));
    }
}

PairSample sample_pair(const SceneRecord& scene, Rng& rng) {
    const int n = scene.variant_count();
    if (n < 2)
        throw ContractError("scene " + std::to_string(scene.scene_id) + " needs at least 2 variants for a pair");
    std::uniform_int_distribution<int> first(0, n - 1);
    std::uniform_int_distribution<int> second(0, n - 2);
    PairSample pair;
    pair.scene_id = scene.scene_id;
    pair.input_variant = first(rng);
    pair.target_variant = second(rng);
    if (pair.target_variant >= pair.input_variant) ++pair.target_variant;
    return pair;
}

TripletPolicy TripletPolicy::seat() {
    TripletPolicy policy;
    policy.name = "seat";
    policy.is_valid_anchor = [](const Label& anchor) {
        return anchor.kind == Label::Kind::seats && !anchor.all_empty();
    };
    policy.is_positive = [](const Label& anchor, const Label& candidate) { return candidate == anchor; };
    policy.is_negative = [](const Label& anchor, const Label& candidate) {
        return candidate.kind == Label::Kind::seats && candidate.seats.size() == anchor.seats.size() &&
               !candidate.all_empty() && hamming_distance(anchor, candidate) == 1;
    };
    return policy;
}

namespace {

TripletPolicy category_policy(std::string name) {
    TripletPolicy policy;
    policy.name = std::move(name);
    policy.is_valid_anchor = [](const Label& anchor) { return anchor.kind == Label::Kind::category; };
    policy.is_positive = [](const Label& anchor, const Label& candidate) {
        return candidate.kind == Label::Kind::category && candidate.category == anchor.category;
    };
    policy.is_negative = [](const Label& anchor, const Label& candidate) {
        return candidate.kind == Label::Kind::category && candidate.category != anchor.category;
    };
    return policy;
}

}  // namespace

TripletPolicy TripletPolicy::pose() { return category_policy("pose"); }
TripletPolicy TripletPolicy::location() { return category_policy("location"); }

TripletPolicy TripletPolicy::by_name(std::string_view name) {
    if (name == "seat") return seat();
    if (name == "pose") return pose();
    if (name == "location") return location();
    throw ConfigError("unknown triplet policy '" + std::string(name) + "' (expected seat, pose or location)");
}

namespace {

struct Candidates {
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
};

Candidates collect_candidates(const DatasetManifest& manifest, std::size_t anchor_index, const TripletPolicy& policy) {
    const Label& anchor = manifest.scenes[anchor_index].label;
    Candidates c;
    for (std::size_t i = 0; i < manifest.scenes.size(); ++i) {
        if (i == anchor_index) continue;
        const Label& label = manifest.scenes[i].label;
        if (policy.is_positive(anchor, label)) c.positives.push_back(i);
        if (policy.is_negative(anchor, label)) c.negatives.push_back(i);
    }
    return c;
}

}  // namespace

bool can_anchor(const DatasetManifest& manifest, int anchor_scene_id, const TripletPolicy& policy) {
    const std::size_t idx = manifest.index_of(anchor_scene_id);
    if (!policy.is_valid_anchor(manifest.scenes[idx].label)) return false;
    const auto c = collect_candidates(manifest, idx, policy);
    return !c.positives.empty() && !c.negatives.empty();
}

std::pair<int, int> sample_triplet_scenes(const DatasetManifest& manifest, int anchor_scene_id,
                                          const TripletPolicy& policy, Rng& rng) {
    const std::size_t idx = manifest.index_of(anchor_scene_id);
    const SceneRecord& anchor = manifest.scenes[idx];
    const std::string who = "anchor scene " + std::to_string(anchor_scene_id) + " (label " +
                            anchor.label.to_string() + ", policy " + policy.name + ")";
    if (!policy.is_valid_anchor(anchor.label)) throw SamplingError(who + " is not a valid anchor");
    const auto c = collect_candidates(manifest, idx, policy);
    if (c.positives.empty()) throw SamplingError("positive predicate has no eligible scene for " + who);
    if (c.negatives.empty()) throw SamplingError("negative predicate has no eligible scene for " + who);

    auto pick = [&rng](const std::vector<std::size_t>& from) {
        std::uniform_int_distribution<std::size_t> d(0, from.size() - 1);
        return from[d(rng)];
    };
    const std::size_t pos = pick(c.positives);
    const std::size_t neg = pick(c.negatives);
    return {manifest.scenes[pos].scene_id, manifest.scenes[neg].scene_id};
}

TripletSample sample_triplet(const DatasetManifest& manifest, int anchor_scene_id, const TripletPolicy& policy,
                             Rng& rng) {
    const auto [positive, negative] = sample_triplet_scenes(manifest, anchor_scene_id, policy, rng);
    TripletSample t;
    t.anchor = sample_pair(manifest.scene(anchor_scene_id), rng);
    t.positive = sample_pair(manifest.scene(positive), rng);
    t.negative = sample_pair(manifest.scene(negative), rng);
    return t;
}

namespace {

struct KindName {
    AugmentKind kind;
    std::string_view name;
};
constexpr KindName kAugmentNames[] = {
    {AugmentKind::gain, "gain"},   {AugmentKind::bias, "bias"}, {AugmentKind::gradient, "gradient"},
    {AugmentKind::noise, "noise"}, {AugmentKind::flip, "flip"}, {AugmentKind::rotate, "rotate"},
    {AugmentKind::crop, "crop"},   {AugmentKind::translate, "translate"},
};

std::string_view kind_name(AugmentKind kind) {
    for (const auto& k : kAugmentNames)
        if (k.kind == kind) return k.name;
    return "?";
}

bool is_geometric(AugmentKind kind) {
    return kind == AugmentKind::flip || kind == AugmentKind::rotate || kind == AugmentKind::crop ||
           kind == AugmentKind::translate;
}

}  // namespace

bool AugmentSpec::is_photometric() const {
    return std::none_of(ops.begin(), ops.end(), [](const AugmentOp& op) { return is_geometric(op.kind); });
}

std::string AugmentSpec::to_string() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (i) out << ',';
        out << kind_name(ops[i].kind) << ':' << ops[i].low << ':' << ops[i].high;
    }
    return out.str();
}

AugmentSpec AugmentSpec::parse(std::string_view text) {
    AugmentSpec spec;
    if (text.empty() || text == "none") return spec;
    std::stringstream items{std::string(text)};
    std::string item;
    while (std::getline(items, item, ',')) {
        std::vector<std::string> parts;
        std::stringstream fields(item);
        std::string f;
        while (std::getline(fields, f, ':')) parts.push_back(f);
        if (parts.empty()) throw ConfigError("empty augmentation entry in '" + std::string(text) + "'");
        AugmentOp op;
        bool known = false;
        for (const auto& k : kAugmentNames)
            if (k.name == parts[0]) {
                op.kind = k.kind;
                known = true;
            }
        if (!known) throw ConfigError("unknown augmentation '" + parts[0] + "'");
        try {
            if (parts.size() == 2) {
                op.low = op.high = std::stod(parts[1]);
            } else if (parts.size() == 3) {
                op.low = std::stod(parts[1]);
                op.high = std::stod(parts[2]);
            } else if (parts.size() == 1 && is_geometric(op.kind)) {
                op.low = op.high = 0.0;
            } else {
                throw ConfigError("augmentation '" + item + "' needs name:low:high");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("augmentation '" + item + "' has a non-numeric range");
        }
        if (op.low > op.high) throw ConfigError("augmentation '" + item + "' has low > high");
        spec.ops.push_back(op);
    }
    return spec;
}

AugmentMode parse_augment_mode(std::string_view text) {
    if (text == "both") return AugmentMode::both;
    if (text == "reverse_denoise" || text == "reverse-denoise") return AugmentMode::reverse_denoise;
    throw ConfigError("unknown augmentation mode '" + std::string(text) + "'");
}

Image augment(const Image& image, const AugmentSpec& spec, Rng& rng) {
    if (!spec.is_photometric())
        throw ConfigError("augmentation spec '" + spec.to_string() +
                          "' contains a geometric transform; only photometric transforms keep content aligned");
    Image out = image;
    const int h = image.height(), w = image.width();
    for (const auto& op : spec.ops) {
        std::uniform_real_distribution<double> range(op.low, op.high);
        const double value = range(rng);
        switch (op.kind) {
            case AugmentKind::gain:
                for (double& v : out.values()) v *= value;
                break;
            case AugmentKind::bias:
                for (double& v : out.values()) v += value;
                break;
            case AugmentKind::gradient: {
                std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
                const double theta = angle(rng);
                const double dx = std::cos(theta), dy = std::sin(theta);
                for (int c = 0; c < out.channels(); ++c)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                            const double u = ((x - (w - 1) / 2.0) * dx + (y - (h - 1) / 2.0) * dy) / std::max(h, w);
                            out.at(c, y, x) += value * u;
                        }
                break;
            }
            case AugmentKind::noise: {
                std::normal_distribution<double> noise(0.0, 1.0);
                for (double& v : out.values()) v += value * noise(rng);
                break;
            }
            default:
                break;
        }
    }
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return out;
}

std::pair<Image, Image> augment_pair(const Image& image, const AugmentSpec& spec, AugmentMode mode, Rng& rng) {
    if (!spec.is_photometric())
        throw ConfigError("augmentation spec '" + spec.to_string() +
                          "' contains a geometric transform; only photometric transforms keep content aligned");
    if (mode == AugmentMode::reverse_denoise) return {image, augment(image, spec, rng)};
    Image first = augment(image, spec, rng);
    Image second = augment(image, spec, rng);
    return {std::move(first), std::move(second)};
}

}  // namespace illuminorm
