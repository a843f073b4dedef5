#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "dmem/errors.hpp"
#include "dmem/text.hpp"

namespace dmem {

/// One stored memory. Embeddings are kept at full double precision in
/// memory and serialized as decimal text at 9 significant digits.
struct MemoryRecord {
    int64_t id = 0;
    std::string owner;
    std::string text;
    std::vector<double> embedding;
    int created_turn = 0;
    int updated_turn = 0;
};

struct SearchHit {
    MemoryRecord record;
    double score = 0.0; // cosine similarity in [-1, 1]
};

enum class OpKind { Add, Update, Delete, Noop };

inline const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::Add: return "ADD";
        case OpKind::Update: return "UPDATE";
        case OpKind::Delete: return "DELETE";
        case OpKind::Noop: return "NOOP";
    }
    return "NOOP";
}

inline std::optional<OpKind> op_kind_from_string(std::string_view s) {
    if (s == "ADD") return OpKind::Add;
    if (s == "UPDATE") return OpKind::Update;
    if (s == "DELETE") return OpKind::Delete;
    if (s == "NOOP") return OpKind::Noop;
    return std::nullopt;
}

/// A planned store mutation. UPDATE/DELETE carry target_id, ADD carries
/// text plus the owning speaker, NOOP carries nothing.
struct MemoryOp {
    OpKind kind = OpKind::Noop;
    std::optional<int64_t> target_id;
    std::optional<std::string> text;
    std::optional<std::string> owner;
};

struct ApplyResult {
    OpKind kind = OpKind::Noop;
    std::optional<int64_t> id; // new id for ADD, target for UPDATE/DELETE
};

using EmbedFn = std::function<std::vector<double>(const std::string&)>;

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw InvalidArgument("cosine: dimension mismatch (" + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine: zero vector");
    double v = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(v, -1.0, 1.0);
}

/// Owns all persisted memories. Retrieval is exact brute force: store sizes
/// stay in the hundreds, and exactness is what makes the oracle tests and
/// golden runs possible. Reads take a shared lock, mutations an exclusive
/// one; the store has no background threads.
class MemoryStore {
public:
    explicit MemoryStore(size_t dimension) : dimension_(dimension) {
        if (dimension == 0) throw InvalidArgument("store dimension must be positive");
    }

    MemoryStore(MemoryStore&& other) noexcept
        : dimension_(other.dimension_), next_id_(other.next_id_),
          records_(std::move(other.records_)) {}

    size_t dimension() const { return dimension_; }

    size_t size() const {
        std::shared_lock lock(mu_);
        return records_.size();
    }

    int64_t add_record(const std::string& owner, const std::string& text,
                       std::vector<double> embedding, int turn) {
        validate(text, embedding);
        std::unique_lock lock(mu_);
        int64_t id = next_id_++;
        records_.emplace(id, MemoryRecord{id, owner, text, std::move(embedding), turn, turn});
        return id;
    }

    std::optional<MemoryRecord> get(int64_t id) const {
        std::shared_lock lock(mu_);
        auto it = records_.find(id);
        if (it == records_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<MemoryRecord> all_records() const {
        std::shared_lock lock(mu_);
        std::vector<MemoryRecord> out;
        out.reserve(records_.size());
        for (const auto& [id, rec] : records_) out.push_back(rec);
        return out;
    }

    /// Exact top-k by cosine, descending; ties broken by ascending id.
    /// Returns min(k, number of eligible records) hits.
    std::vector<SearchHit> search(const std::vector<double>& query, size_t k,
                                  const std::optional<std::string>& owner = std::nullopt) const {
        if (query.size() != dimension_)
            throw InvalidArgument("search: query dimension " + std::to_string(query.size()) +
                                  " does not match store dimension " + std::to_string(dimension_));
        if (k == 0) throw InvalidArgument("search: k must be >= 1");
        std::shared_lock lock(mu_);
        std::vector<SearchHit> hits;
        for (const auto& [id, rec] : records_) {
            if (owner && rec.owner != *owner) continue;
            hits.push_back({rec, cosine(query, rec.embedding)});
        }
        std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.record.id < b.record.id;
        });
        if (hits.size() > k) hits.resize(k);
        return hits;
    }

    ApplyResult apply_op(const MemoryOp& op, const EmbedFn& embed, int turn) {
        switch (op.kind) {
            case OpKind::Noop:
                return {OpKind::Noop, std::nullopt};
            case OpKind::Add: {
                if (!op.text || op.text->empty())
                    throw InvalidArgument("ADD requires non-empty text");
                std::string owner = op.owner.value_or("");
                int64_t id = add_record(owner, *op.text, embed(*op.text), turn);
                return {OpKind::Add, id};
            }
            case OpKind::Update: {
                if (!op.target_id) throw InvalidArgument("UPDATE requires target_id");
                if (!op.text || op.text->empty())
                    throw InvalidArgument("UPDATE requires non-empty text");
                auto embedding = embed(*op.text);
                validate(*op.text, embedding);
                std::unique_lock lock(mu_);
                auto it = records_.find(*op.target_id);
                if (it == records_.end())
                    throw NotFound("UPDATE: no record with id " + std::to_string(*op.target_id));
                it->second.text = *op.text;
                it->second.embedding = std::move(embedding);
                it->second.updated_turn = turn;
                return {OpKind::Update, *op.target_id};
            }
            case OpKind::Delete: {
                if (!op.target_id) throw InvalidArgument("DELETE requires target_id");
                std::unique_lock lock(mu_);
                auto it = records_.find(*op.target_id);
                if (it == records_.end())
                    throw NotFound("DELETE: no record with id " + std::to_string(*op.target_id));
                records_.erase(it);
                return {OpKind::Delete, *op.target_id};
            }
        }
        return {OpKind::Noop, std::nullopt};
    }

    /// Line-delimited text snapshot. Header carries the format version,
    /// dimension and id counter; one record per line after that.
    void snapshot(const std::string& path) const {
        std::shared_lock lock(mu_);
        std::ostringstream out;
        out << "dmem-store v1\n";
        out << "dim " << dimension_ << "\n";
        out << "next_id " << next_id_ << "\n";
        out << "count " << records_.size() << "\n";
        for (const auto& [id, rec] : records_) {
            out << id << '\t' << rec.created_turn << '\t' << rec.updated_turn << '\t'
                << text::escape_line(rec.owner) << '\t' << text::escape_line(rec.text) << '\t';
            for (size_t i = 0; i < rec.embedding.size(); ++i) {
                if (i) out << ' ';
                out << format_component(rec.embedding[i]);
            }
            out << '\n';
        }
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("snapshot: cannot open " + path + " for writing");
        f << out.str();
    }

    static MemoryStore load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw FormatError("load: cannot open " + path);
        std::string line;
        int lineno = 0;
        auto next_line = [&](const char* what) {
            if (!std::getline(f, line))
                throw FormatError(path + ": unexpected end of file, expected " + std::string(what) +
                                  " at line " + std::to_string(lineno + 1));
            ++lineno;
        };
        next_line("magic header");
        if (line != "dmem-store v1")
            throw FormatError(path + ":1: unsupported header \"" + line + "\"");
        size_t dim = parse_header_field(path, f, lineno, "dim");
        uint64_t next_id = parse_header_field(path, f, lineno, "next_id");
        uint64_t count = parse_header_field(path, f, lineno, "count");

        MemoryStore store(dim);
        store.next_id_ = static_cast<int64_t>(next_id);
        for (uint64_t r = 0; r < count; ++r) {
            next_line("record");
            auto fields = text::split(line, '\t');
            if (fields.size() != 6)
                throw FormatError(path + ":" + std::to_string(lineno) + ": expected 6 fields, got " +
                                  std::to_string(fields.size()));
            MemoryRecord rec;
            try {
                rec.id = std::stoll(fields[0]);
                rec.created_turn = std::stoi(fields[1]);
                rec.updated_turn = std::stoi(fields[2]);
            } catch (const std::exception&) {
                throw FormatError(path + ":" + std::to_string(lineno) + ": bad numeric field");
            }
            rec.owner = text::unescape_line(fields[3]);
            rec.text = text::unescape_line(fields[4]);
            for (const auto& tok : text::split_ws(fields[5])) {
                char* end = nullptr;
                double v = std::strtod(tok.c_str(), &end);
                if (end == tok.c_str() || *end != '\0')
                    throw FormatError(path + ":" + std::to_string(lineno) +
                                      ": bad embedding component \"" + tok + "\"");
                rec.embedding.push_back(v);
            }
            if (rec.embedding.size() != dim)
                throw FormatError(path + ":" + std::to_string(lineno) + ": embedding has " +
                                  std::to_string(rec.embedding.size()) + " components, store dim is " +
                                  std::to_string(dim));
            if (rec.text.empty())
                throw FormatError(path + ":" + std::to_string(lineno) + ": empty text field");
            store.records_.emplace(rec.id, std::move(rec));
        }
        return store;
    }

    /// Stable digest of the full store contents; query paths must leave it
    /// unchanged.
    uint64_t content_hash() const {
        std::shared_lock lock(mu_);
        uint64_t h = text::fnv1a("dmem-store");
        h = text::fnv1a(std::to_string(dimension_), h);
        h = text::fnv1a(std::to_string(next_id_), h);
        for (const auto& [id, rec] : records_) {
            h = text::fnv1a(std::to_string(id), h);
            h = text::fnv1a(rec.owner, h);
            h = text::fnv1a(rec.text, h);
            h = text::fnv1a(std::to_string(rec.created_turn), h);
            h = text::fnv1a(std::to_string(rec.updated_turn), h);
            for (double v : rec.embedding) h = text::fnv1a(format_component(v), h);
        }
        return h;
    }

    static std::string format_component(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        return buf;
    }

private:
    void validate(const std::string& txt, const std::vector<double>& embedding) const {
        if (txt.empty()) throw InvalidArgument("memory text must be non-empty");
        if (embedding.size() != dimension_)
            throw InvalidArgument("embedding dimension " + std::to_string(embedding.size()) +
                                  " does not match store dimension " + std::to_string(dimension_));
    }

    static uint64_t parse_header_field(const std::string& path, std::ifstream& f, int& lineno,
                                       const std::string& key) {
        std::string line;
        if (!std::getline(f, line))
            throw FormatError(path + ": missing header field \"" + key + "\"");
        ++lineno;
        auto parts = text::split_ws(line);
        if (parts.size() != 2 || parts[0] != key)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected \"" + key +
                              " <value>\", got \"" + line + "\"");
        try {
            return std::stoull(parts[1]);
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad value for \"" + key + "\"");
        }
    }

    size_t dimension_;
    int64_t next_id_ = 1;
    std::map<int64_t, MemoryRecord> records_; // keyed by id, ids never reused
    mutable std::shared_mutex mu_;
};

} // namespace dmem
