#include "smmqg/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "smmqg/error.hpp"
#include "smmqg/parallel.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double cosine_distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw ValidationError("cosine_distance: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                              std::to_string(b.dim()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw ValidationError("cosine_distance: zero vector");
    }
    auto d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(d, 0.0, 2.0);
}

// ---------------------------------------------------------------------------

DenseIndex DenseIndex::from_entries(std::vector<std::pair<std::string, EmbeddingVector>> entries,
                                    std::unordered_map<std::string, Modality> modality_of) {
    DenseIndex idx;
    if (entries.empty()) {
        throw ValidationError("empty corpus");
    }
    if (modality_of.size() != entries.size()) {
        throw ValidationError("dense index: modality map does not match entries");
    }
    idx.dim_ = entries.front().second.dim();
    if (idx.dim_ == 0) {
        throw ValidationError("dense index: zero-dimensional embeddings");
    }
    for (auto& [id, vec] : entries) {
        if (vec.dim() != idx.dim_) {
            throw IntegrityError("dense index: vector for " + id + " has dim " + std::to_string(vec.dim()));
        }
        if (!vec.all_finite()) {
            throw IntegrityError("dense index: non-finite vector for " + id);
        }
        auto m = modality_of.find(id);
        if (m == modality_of.end()) {
            throw ValidationError("dense index: no modality for " + id);
        }
        if (!idx.pos_.emplace(id, idx.ids_.size()).second) {
            throw ValidationError("dense index: duplicate id " + id);
        }
        idx.ids_.push_back(id);
        idx.modalities_.push_back(m->second);
        idx.vectors_.push_back(std::move(vec));
    }
    return idx;
}

const EmbeddingVector& DenseIndex::vector(std::string_view id) const {
    auto it = pos_.find(std::string(id));
    if (it == pos_.end()) {
        throw ValidationError("id not in dense index: " + std::string(id));
    }
    return vectors_[it->second];
}

Modality DenseIndex::modality(std::string_view id) const {
    auto it = pos_.find(std::string(id));
    if (it == pos_.end()) {
        throw ValidationError("id not in dense index: " + std::string(id));
    }
    return modalities_[it->second];
}

std::vector<Neighbor> DenseIndex::knn(const EmbeddingVector& query, std::size_t k, std::optional<Modality> modality,
                                      const std::set<std::string>* exclude) const {
    if (k == 0) {
        throw ValidationError("knn: k must be >= 1");
    }
    std::vector<std::pair<double, std::size_t>> pool;
    pool.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (modality && modalities_[i] != *modality) {
            continue;
        }
        if (exclude && exclude->contains(ids_[i])) {
            continue;
        }
        pool.emplace_back(cosine_distance(query, vectors_[i]), i);
    }
    auto less = [&](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first < b.first;
        }
        return ids_[a.second] < ids_[b.second];
    };
    auto take = std::min(k, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take), pool.end(), less);
    std::vector<Neighbor> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        out.push_back({ids_[pool[i].second], pool[i].first});
    }
    return out;
}

namespace {
constexpr char kMagic[4] = {'S', 'M', 'Q', 'I'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::ifstream& in, T& v) {
    return static_cast<bool>(in.read(reinterpret_cast<char*>(&v), sizeof(T)));
}
}  // namespace

void DenseIndex::save(const std::filesystem::path& path, std::uint64_t corpus_hash) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ValidationError("cannot write index: " + path.string());
    }
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(dim_));
    put(out, static_cast<std::uint64_t>(ids_.size()));
    put(out, corpus_hash);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        put(out, static_cast<std::uint32_t>(ids_[i].size()));
        out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
        put(out, static_cast<std::uint8_t>(modalities_[i]));
        out.write(reinterpret_cast<const char*>(vectors_[i].values.data()),
                  static_cast<std::streamsize>(dim_ * sizeof(double)));
    }
    if (!out) {
        throw ValidationError("failed writing index: " + path.string());
    }
}

std::optional<DenseIndex> DenseIndex::load(const std::filesystem::path& path, std::uint64_t corpus_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    char magic[4];
    std::uint32_t version = 0;
    std::uint64_t dim = 0;
    std::uint64_t count = 0;
    std::uint64_t hash = 0;
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic) || !get(in, version) || version != kVersion ||
        !get(in, dim) || !get(in, count) || !get(in, hash)) {
        throw ValidationError("corrupt index file: " + path.string());
    }
    if (hash != corpus_hash) {
        return std::nullopt;
    }
    std::vector<std::pair<std::string, EmbeddingVector>> entries;
    std::unordered_map<std::string, Modality> modality_of;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t len = 0;
        if (!get(in, len)) {
            throw ValidationError("truncated index file: " + path.string());
        }
        std::string id(len, '\0');
        std::uint8_t m = 0;
        std::vector<double> values(dim);
        if (!in.read(id.data(), len) || !get(in, m) || m > 2 ||
            !in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(dim * sizeof(double)))) {
            throw ValidationError("truncated index file: " + path.string());
        }
        modality_of.emplace(id, static_cast<Modality>(m));
        entries.emplace_back(std::move(id), EmbeddingVector(std::move(values)));
    }
    return from_entries(std::move(entries), std::move(modality_of));
}

DenseIndex build_dense_index(Provider& provider, const Corpus& corpus, std::size_t batch_size, unsigned jobs) {
    if (corpus.empty()) {
        throw ValidationError("empty corpus");
    }
    batch_size = std::max<std::size_t>(batch_size, 1);
    const auto& sources = corpus.sources();
    std::vector<EmbeddingVector> vectors(sources.size());
    const auto batches = (sources.size() + batch_size - 1) / batch_size;
    parallel_for(batches, jobs, [&](std::size_t b) {
        auto begin = b * batch_size;
        auto end = std::min(begin + batch_size, sources.size());
        std::vector<std::string> texts;
        for (auto i = begin; i < end; ++i) {
            texts.push_back(search_text(sources[i]));
        }
        std::vector<EmbeddingVector> out;
        try {
            out = provider.embed(texts);
        } catch (const TransportError& e) {
            throw TransportError("embedding batch starting at " + sources[begin].id + ": " + e.what());
        }
        for (auto i = begin; i < end; ++i) {
            vectors[i] = std::move(out[i - begin]);
        }
    });
    std::vector<std::pair<std::string, EmbeddingVector>> entries;
    std::unordered_map<std::string, Modality> modality_of;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        entries.emplace_back(sources[i].id, std::move(vectors[i]));
        modality_of.emplace(sources[i].id, sources[i].modality);
    }
    return DenseIndex::from_entries(std::move(entries), std::move(modality_of));
}

// ---------------------------------------------------------------------------

SeedWeights compute_seed_weights(const DenseIndex& index, std::size_t k_seed, double beta) {
    if (k_seed == 0) {
        throw ValidationError("k_seed must be >= 1");
    }
    if (index.size() < k_seed + 1) {
        throw ValidationError("seed weights need at least k_seed + 1 = " + std::to_string(k_seed + 1) +
                              " indexed sources, have " + std::to_string(index.size()));
    }
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ValidationError("beta must be a finite nonnegative number");
    }
    SeedWeights out;
    out.k_seed = k_seed;
    out.beta = beta;
    const auto& ids = index.ids();
    std::vector<double> dist;
    dist.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        dist.clear();
        const auto& vi = index.vector(ids[i]);
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (j != i) {
                dist.push_back(cosine_distance(vi, index.vector(ids[j])));
            }
        }
        auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k_seed);
        std::partial_sort(dist.begin(), kth, dist.end());
        double sum = 0.0;
        for (auto it = dist.begin(); it != kth; ++it) {
            sum += *it;
        }
        out.w.emplace(ids[i], sum / static_cast<double>(k_seed));
    }
    return out;
}

std::vector<std::pair<std::string, double>> seed_probabilities(const SeedWeights& weights) {
    if (weights.w.empty()) {
        throw ValidationError("no seed weights");
    }
    double min_scaled = std::numeric_limits<double>::infinity();
    for (const auto& [id, w] : weights.w) {
        min_scaled = std::min(min_scaled, weights.beta * w);
    }
    std::vector<std::pair<std::string, double>> probs;
    probs.reserve(weights.w.size());
    double total = 0.0;
    for (const auto& [id, w] : weights.w) {
        auto p = std::exp(-(weights.beta * w - min_scaled));
        probs.emplace_back(id, p);
        total += p;
    }
    for (auto& [id, p] : probs) {
        p /= total;
    }
    return probs;
}

std::string sample_seed(const SeedWeights& weights, Rng& rng) {
    auto probs = seed_probabilities(weights);
    auto u = uniform01(rng);
    double acc = 0.0;
    for (const auto& [id, p] : probs) {
        acc += p;
        if (u < acc) {
            return id;
        }
    }
    return probs.back().first;
}

// ---------------------------------------------------------------------------

Bm25Index Bm25Index::build(const Corpus& corpus, Bm25Params params) {
    if (corpus.empty()) {
        throw ValidationError("empty corpus");
    }
    Bm25Index idx;
    idx.params_ = params;
    std::uint64_t total = 0;
    for (const auto& src : corpus.sources()) {
        auto doc = static_cast<std::uint32_t>(idx.ids_.size());
        auto tokens = tokenize(search_text(src));
        std::map<std::string, std::uint32_t> tf;
        for (auto& t : tokens) {
            ++tf[t];
        }
        for (auto& [term, count] : tf) {
            idx.postings_[term].push_back({doc, count});
        }
        idx.ids_.push_back(src.id);
        idx.modalities_.push_back(src.modality);
        idx.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total += tokens.size();
    }
    idx.avg_len_ = static_cast<double>(total) / static_cast<double>(idx.ids_.size());
    return idx;
}

std::size_t Bm25Index::doc_length(std::string_view id) const {
    auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) {
        throw ValidationError("id not in bm25 index: " + std::string(id));
    }
    return lengths_[static_cast<std::size_t>(it - ids_.begin())];
}

std::vector<ScoredId> Bm25Index::search(std::string_view query, std::size_t k, std::optional<Modality> modality) const {
    if (k == 0) {
        throw ValidationError("bm25 search: k must be >= 1");
    }
    auto terms = tokenize(query);
    if (terms.empty()) {
        throw ValidationError("bm25 search: empty query after tokenization");
    }
    const auto n = static_cast<double>(ids_.size());
    std::unordered_map<std::uint32_t, double> scores;
    for (const auto& term : terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) {
            continue;
        }
        const auto df = static_cast<double>(it->second.size());
        const auto idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& p : it->second) {
            if (modality && modalities_[p.doc] != *modality) {
                continue;
            }
            const auto tf = static_cast<double>(p.tf);
            const auto norm = 1.0 - params_.b + params_.b * static_cast<double>(lengths_[p.doc]) / avg_len_;
            scores[p.doc] += idf * tf * (params_.k1 + 1.0) / (tf + params_.k1 * norm);
        }
    }
    std::vector<ScoredId> out;
    out.reserve(scores.size());
    for (const auto& [doc, s] : scores) {
        out.push_back({ids_[doc], s});
    }
    std::sort(out.begin(), out.end(), [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.id < b.id;
    });
    if (out.size() > k) {
        out.resize(k);
    }
    return out;
}

}  // namespace smmqg
