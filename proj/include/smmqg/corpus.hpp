#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace smmqg {

class Provider;
class PromptTemplate;

enum class Modality : std::uint8_t { Text = 0, Table = 1, Image = 2 };

inline constexpr std::array<Modality, 3> kAllModalities{Modality::Text, Modality::Table,
                                                         Modality::Image};

std::string_view to_string(Modality m);
/// Lowercase wire name: "text" | "table" | "image".
std::string_view wire_name(Modality m);
Modality parse_modality(std::string_view name);

/// One retrievable unit of corpus content.
struct Source {
    std::string id;
    Modality modality = Modality::Text;
    std::optional<std::string> title;
    /// Passage body, pipe-serialized table (title line first), or empty for images.
    std::string text;
    std::optional<std::string> caption;
    std::optional<std::string> verbalisation;
    std::optional<std::string> image_ref;

    bool operator==(const Source&) const = default;
};

/// Immutable once built. Construct through Corpus::from_sources or ingest_corpus.
class Corpus {
public:
    Corpus() = default;

    /// Validates per-source invariants and id uniqueness.
    static Corpus from_sources(std::vector<Source> sources);

    const std::vector<Source>& sources() const { return sources_; }
    std::size_t size() const { return sources_.size(); }
    bool empty() const { return sources_.empty(); }
    std::size_t count(Modality m) const { return counts_[static_cast<std::size_t>(m)]; }
    const std::array<std::size_t, 3>& counts_by_modality() const { return counts_; }

    const Source& at(std::string_view id) const;
    const Source* find(std::string_view id) const;

    /// Stable FNV-1a digest over the canonical JSONL serialization.
    std::uint64_t content_hash() const;

    bool operator==(const Corpus& other) const { return sources_ == other.sources_; }

private:
    std::vector<Source> sources_;
    std::array<std::size_t, 3> counts_{0, 0, 0};
    std::unordered_map<std::string, std::size_t> by_id_;
};

inline constexpr std::size_t kDefaultMinTextChars = 200;

/// Reads a JSON-lines corpus. Text sources shorter than min_text_chars
/// (UTF-8 code points) are dropped. Table bodies that do not start with
/// their title line get it prepended.
Corpus ingest_corpus(const std::string& path, std::size_t min_text_chars = kDefaultMinTextChars);
Corpus parse_corpus(std::string_view jsonl, std::size_t min_text_chars = kDefaultMinTextChars);

std::string source_to_json_line(const Source& src);
std::string corpus_to_jsonl(const Corpus& corpus);

/// Title line, header row, then one line per row; cells joined by " | ".
/// A literal '|' inside a cell becomes '/'.
std::string serialize_table(std::string_view title, const std::vector<std::string>& header,
                            const std::vector<std::vector<std::string>>& rows);

/// "caption: verbalisation", or the caption alone when no verbalisation exists.
std::string image_search_text(const Source& src);

/// Text used for embedding and lexical indexing of any source.
/// Text: "title: body" (or body); table: body; image: image_search_text.
std::string search_text(const Source& src);

/// Asks an image-capable provider to describe the image, rendering the
/// `verbalize` template with the caption. Returns the response verbatim.
std::string verbalize_image(Provider& provider, const PromptTemplate& prompt, const Source& src);

/// Returns a copy of the corpus in which every image without a
/// verbalisation has been verbalised.
Corpus verbalize_missing(Provider& provider, const PromptTemplate& prompt, const Corpus& corpus);

}  // namespace smmqg
