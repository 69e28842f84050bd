#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bexg/error.hpp"

namespace bexg {

/// Ordered set of distinct factor labels (occupations, treatments, actions...).
/// Index order is insertion order and is the tie-break order everywhere.
class FactorSet {
  public:
    FactorSet() = default;

    explicit FactorSet(std::vector<std::string> labels) {
        for (auto& l : labels) {
            if (contains(l)) throw ConfigError("duplicate factor label '" + l + "'");
            add(std::move(l));
        }
    }

    /// Appends `label` if unseen; returns its index either way.
    std::size_t add(std::string label) {
        if (auto it = index_.find(label); it != index_.end()) return it->second;
        const auto idx = labels_.size();
        index_.emplace(label, idx);
        labels_.push_back(std::move(label));
        return idx;
    }

    std::optional<std::size_t> index_of(const std::string& label) const {
        auto it = index_.find(label);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    bool contains(const std::string& label) const { return index_.count(label) != 0; }
    const std::string& label(std::size_t i) const { return labels_.at(i); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }

    friend bool operator==(const FactorSet& a, const FactorSet& b) { return a.labels_ == b.labels_; }

  private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Labels a, b, c, ... z, then f26, f27, ...
inline FactorSet letter_factors(std::size_t m) {
    std::vector<std::string> labels;
    labels.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
        labels.push_back(i < 26 ? std::string(1, static_cast<char>('a' + i)) : "f" + std::to_string(i));
    return FactorSet(std::move(labels));
}

}  // namespace bexg
