#include "illuminorm/latent_index.hpp"

#include "illuminorm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace illuminorm {

LatentIndex::LatentIndex(int dim, std::string fingerprint) : dim_(dim), fingerprint_(std::move(fingerprint)) {
    if (dim < 1) throw ContractError("index dimension must be >= 1");
}

void LatentIndex::add(IndexEntry entry) {
    if (static_cast<int>(entry.embedding.size()) != dim_)
        throw ContractError("embedding of length " + std::to_string(entry.embedding.size()) + " in an index of dim " +
                            std::to_string(dim_));
    for (float v : entry.embedding)
        if (!std::isfinite(v)) throw ContractError("non-finite embedding for scene " + std::to_string(entry.scene_id));
    entries_.push_back(std::move(entry));
}

std::vector<Neighbour> LatentIndex::knn(std::span<const float> query, std::size_t k) const {
    if (k < 1 || k > entries_.size())
        throw ContractError("k=" + std::to_string(k) + " outside [1, " + std::to_string(entries_.size()) + "]");
    if (static_cast<int>(query.size()) != dim_) throw ContractError("query length does not match index dimension");
    std::vector<Neighbour> all(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        double d = 0.0;
        const auto& e = entries_[i].embedding;
        for (int j = 0; j < dim_; ++j) {
            const double diff = double(e[j]) - double(query[j]);
            d += diff * diff;
        }
        all[i] = {i, d};
    }
    auto closer = [this](const Neighbour& a, const Neighbour& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        const auto& ea = entries_[a.entry];
        const auto& eb = entries_[b.entry];
        if (ea.scene_id != eb.scene_id) return ea.scene_id < eb.scene_id;
        return ea.variant_id < eb.variant_id;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
    all.resize(k);
    return all;
}

namespace {
constexpr std::string_view kHeader = "# illuminorm-latent-index v1";
}

void LatentIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write index " + path.string());
    out << kHeader << '\n' << "# dim=" << dim_ << " fingerprint=" << (fingerprint_.empty() ? "-" : fingerprint_) << '\n';
    out << "scene_id,variant_id,label";
    for (int j = 0; j < dim_; ++j) out << ",z" << j;
    out << '\n' << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (const auto& e : entries_) {
        out << e.scene_id << ',' << e.variant_id << ',' << e.label.to_string();
        for (float v : e.embedding) out << ',' << v;
        out << '\n';
    }
    if (!out) throw DataError("failed writing index " + path.string());
}

LatentIndex LatentIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open index " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != kHeader) throw DataError(path.string() + " is not a latent index");
    std::getline(in, line);
    int dim = 0;
    char fp[128] = {0};
    if (std::sscanf(line.c_str(), "# dim=%d fingerprint=%127s", &dim, fp) != 2 || dim < 1)
        throw DataError("malformed index header in " + path.string());
    LatentIndex index(dim, std::string(fp) == "-" ? std::string() : std::string(fp));
    std::getline(in, line);  // column names
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream fields(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(fields, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != 3 + dim)
            throw DataError("index row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " columns");
        IndexEntry e;
        try {
            e.scene_id = std::stoi(cells[0]);
            e.variant_id = std::stoi(cells[1]);
            e.label = Label::parse(cells[2]);
            for (int j = 0; j < dim; ++j) e.embedding.push_back(std::stof(cells[3 + j]));
        } catch (const std::logic_error&) {
            throw DataError("index row " + std::to_string(row) + " is malformed");
        }
        index.add(std::move(e));
    }
    return index;
}

LatentIndex build_index(const ImageCodec& codec, const DatasetManifest& manifest) {
    std::vector<const Image*> images;
    for (const auto& scene : manifest.scenes)
        for (const auto& v : scene.variants) images.push_back(&v);
    if (images.empty()) throw ContractError("cannot index an empty manifest");
    const auto codes = codec.embed_batch(images);
    LatentIndex index(codec.latent_dim(), codec.fingerprint());
    std::size_t k = 0;
    for (const auto& scene : manifest.scenes)
        for (int j = 0; j < scene.variant_count(); ++j) index.add({codes[k++], scene.scene_id, j, scene.label});
    return index;
}

void require_matching(const LatentIndex& index, const ImageCodec& codec) {
    const std::string fp = codec.fingerprint();
    if (!fp.empty() && !index.fingerprint().empty() && fp != index.fingerprint())
        throw ContractError("index fingerprint " + index.fingerprint() + " does not match model fingerprint " + fp);
    if (codec.latent_dim() != index.dim()) throw ContractError("index dimension does not match the model latent size");
}

Label predict_label(const LatentIndex& index, std::span<const float> embedding) {
    if (index.empty()) throw ContractError("cannot predict from an empty index");
    return index.entry(index.knn(embedding, 1).front().entry).label;
}

Label predict_label(const LatentIndex& index, const ImageCodec& codec, const Image& x) {
    if (index.empty()) throw ContractError("cannot predict from an empty index");
    require_matching(index, codec);
    return predict_label(index, codec.embed(x));
}

Image nn_reconstruct(const LatentIndex& index, const ImageCodec& codec, const Image& x) {
    if (index.empty()) throw ContractError("cannot reconstruct from an empty index");
    require_matching(index, codec);
    const auto nearest = index.knn(codec.embed(x), 1).front();
    return codec.decode(index.entry(nearest.entry).embedding);
}

}  // namespace illuminorm
