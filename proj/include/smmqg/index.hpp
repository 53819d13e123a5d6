#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "smmqg/corpus.hpp"
#include "smmqg/embedding.hpp"

namespace smmqg {

class Provider;

/// Reproducible generator used everywhere randomness is needed.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from the top 53 bits of one draw, so the
/// sequence is identical across standard libraries.
double uniform01(Rng& rng);

/// 1 - cos(a, b). Throws on dimension mismatch or a zero vector.
double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b);

struct Neighbor {
    std::string id;
    double distance = 0.0;
};

/// Exhaustive cosine index over source embeddings.
class DenseIndex {
public:
    DenseIndex() = default;

    /// Validates equal dimensions and finite values.
    static DenseIndex from_entries(std::vector<std::pair<std::string, EmbeddingVector>> entries,
                                   std::unordered_map<std::string, Modality> modality_of);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    std::size_t dim() const { return dim_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const EmbeddingVector& vector(std::string_view id) const;
    Modality modality(std::string_view id) const;

    /// Up to k nearest entries by ascending cosine distance, ties by id.
    /// The modality filter and exclusion set apply before ranking.
    std::vector<Neighbor> knn(const EmbeddingVector& query, std::size_t k,
                              std::optional<Modality> modality = std::nullopt,
                              const std::set<std::string>* exclude = nullptr) const;

    /// Binary sidecar: magic, dim, count, corpus hash, then (id, modality, vector) records.
    void save(const std::filesystem::path& path, std::uint64_t corpus_hash) const;
    /// Returns nullopt if the file is absent or was built for another corpus.
    static std::optional<DenseIndex> load(const std::filesystem::path& path, std::uint64_t corpus_hash);

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<EmbeddingVector> vectors_;
    std::vector<Modality> modalities_;
    std::unordered_map<std::string, std::size_t> pos_;
};

/// Embeds every source's search text, in batches, concurrently up to `jobs`.
DenseIndex build_dense_index(Provider& provider, const Corpus& corpus, std::size_t batch_size = 32,
                             unsigned jobs = 1);

struct SeedWeights {
    std::map<std::string, double> w;
    std::size_t k_seed = 5;
    double beta = 0.1;
};

/// w_i = mean cosine distance from source i to its k_seed nearest other sources.
SeedWeights compute_seed_weights(const DenseIndex& index, std::size_t k_seed, double beta = 0.1);

/// Draws one id with probability proportional to exp(-beta * w_i).
std::string sample_seed(const SeedWeights& weights, Rng& rng);

/// Sampling probabilities in id order; exposed for diagnostics and tests.
std::vector<std::pair<std::string, double>> seed_probabilities(const SeedWeights& weights);

struct ScoredId {
    std::string id;
    double score = 0.0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over tokenized search texts.
class Bm25Index {
public:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    static Bm25Index build(const Corpus& corpus, Bm25Params params = {});

    /// Documents sharing at least one query term, by descending score, ties by id.
    std::vector<ScoredId> search(std::string_view query, std::size_t k,
                                 std::optional<Modality> modality = std::nullopt) const;

    double avg_doc_length() const { return avg_len_; }
    std::size_t doc_count() const { return ids_.size(); }
    std::size_t doc_length(std::string_view id) const;
    const Bm25Params& params() const { return params_; }

private:
    Bm25Params params_;
    std::vector<std::string> ids_;
    std::vector<Modality> modalities_;
    std::vector<std::uint32_t> lengths_;
    double avg_len_ = 0.0;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
};

}  // namespace smmqg
