#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/model.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace illuminorm {

struct IndexEntry {
    std::vector<float> embedding;
    int scene_id = 0;
    int variant_id = 0;
    Label label;

    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct Neighbour {
    std::size_t entry = 0;  // position in LatentIndex::entries()
    double distance = 0.0;  // squared L2
};

/// Exact linear-scan index over training embeddings.
class LatentIndex {
public:
    LatentIndex(int dim, std::string fingerprint);

    int dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::string& fingerprint() const { return fingerprint_; }
    const std::vector<IndexEntry>& entries() const { return entries_; }
    const IndexEntry& entry(std::size_t i) const { return entries_.at(i); }

    /// Throws ContractError if the embedding length differs from dim or is non-finite.
    void add(IndexEntry entry);

    /// k nearest entries, ascending squared distance, ties by (scene_id, variant_id).
    /// Throws ContractError unless 1 <= k <= size().
    std::vector<Neighbour> knn(std::span<const float> query, std::size_t k) const;

    /// Header lines "# illuminorm-latent-index v1" and "# dim=<d> fingerprint=<hex>", then
    /// CSV columns scene_id,variant_id,label,z0..z{d-1}.
    void save(const std::filesystem::path& path) const;
    static LatentIndex load(const std::filesystem::path& path);

    friend bool operator==(const LatentIndex&, const LatentIndex&) = default;

private:
    int dim_;
    std::string fingerprint_;
    std::vector<IndexEntry> entries_;
};

/// One entry per image (every variant of every scene).
LatentIndex build_index(const ImageCodec& codec, const DatasetManifest& manifest);

/// Throws ContractError if both fingerprints are known and differ.
void require_matching(const LatentIndex& index, const ImageCodec& codec);

Label predict_label(const LatentIndex& index, std::span<const float> embedding);
Label predict_label(const LatentIndex& index, const ImageCodec& codec, const Image& x);

/// Decodes the nearest training embedding instead of the query's own code.
Image nn_reconstruct(const LatentIndex& index, const ImageCodec& codec, const Image& x);

}  // namespace illuminorm
