#pragma once

// Catalogs of uniform comparison designs for t = p: Latin square designs,
// Williams squares, and extra-period designs.

#include <algorithm>
#include <string>
#include <vector>

#include "xover/gee_variance.hpp"

namespace xover {

inline constexpr std::size_t kMaxCatalogTreatments = 5;

struct CatalogDesign {
    std::string name;  // lsd, wsd, epd
    std::size_t index = 0;
    std::vector<TreatmentSequence> sequences;
    bool williams = false;

    ApproxDesign design() const { return ApproxDesign::uniform(sequences); }
};

/// True when every ordered pair of distinct treatments occurs exactly once
/// as consecutive periods over the rows.
inline bool is_williams(const std::vector<TreatmentSequence>& rows, std::size_t treatments) {
    std::vector<int> seen(treatments * treatments, 0);
    for (const auto& r : rows)
        for (std::size_t i = 1; i < r.size(); ++i) {
            if (r[i] == r[i - 1]) return false;
            ++seen[static_cast<std::size_t>(r[i - 1]) * treatments + static_cast<std::size_t>(r[i])];
        }
    for (std::size_t a = 0; a < treatments; ++a)
        for (std::size_t b = 0; b < treatments; ++b)
            if (a != b && seen[a * treatments + b] != 1) return false;
    return true;
}

namespace detail {

inline void check_square_layout(const CrossoverLayout& layout) {
    layout.validate();
    if (layout.treatments != layout.periods)
        throw ValidationError("catalog designs need t = p, got t = " + std::to_string(layout.treatments) +
                              ", p = " + std::to_string(layout.periods));
    if (layout.treatments < 2 || layout.treatments > kMaxCatalogTreatments)
        throw ValidationError("catalog designs are supported for 2 <= t <= " +
                              std::to_string(kMaxCatalogTreatments));
}

// Fills rows one at a time; row r starts with treatment r, so every set of
// rows is produced exactly once.
inline void fill_squares(std::size_t t, std::vector<std::vector<int>>& rows, std::vector<std::vector<bool>>& col_used,
                         std::vector<std::vector<std::vector<int>>>& out) {
    const std::size_t r = rows.size();
    if (r == t) {
        out.push_back(rows);
        return;
    }
    std::vector<int> row(t, -1);
    std::vector<bool> row_used(t, false);
    row[0] = static_cast<int>(r);
    row_used[r] = true;
    col_used[0][r] = true;
    auto rec = [&](auto&& self, std::size_t c) -> void {
        if (c == t) {
            rows.push_back(row);
            fill_squares(t, rows, col_used, out);
            rows.pop_back();
            return;
        }
        for (std::size_t v = 0; v < t; ++v) {
            if (row_used[v] || col_used[c][v]) continue;
            row_used[v] = col_used[c][v] = true;
            row[c] = static_cast<int>(v);
            self(self, c + 1);
            row_used[v] = col_used[c][v] = false;
        }
    };
    rec(rec, 1);
    col_used[0][r] = false;
}

inline TreatmentSequence to_sequence(const std::vector<int>& row) {
    std::string s;
    for (int v : row) s.push_back(static_cast<char>('A' + v));
    return TreatmentSequence::parse(s);
}

}  // namespace detail

/// All Latin square designs (as sets of rows, rows sorted), in
/// lexicographic order of their sorted row lists.
inline std::vector<CatalogDesign> latin_square_designs(const CrossoverLayout& layout) {
    detail::check_square_layout(layout);
    const std::size_t t = layout.treatments;
    std::vector<std::vector<int>> rows;
    std::vector<std::vector<bool>> col_used(t, std::vector<bool>(t, false));
    std::vector<std::vector<std::vector<int>>> squares;
    detail::fill_squares(t, rows, col_used, squares);

    std::vector<std::vector<TreatmentSequence>> sets;
    for (const auto& sq : squares) {
        std::vector<TreatmentSequence> seqs;
        for (const auto& r : sq) seqs.push_back(detail::to_sequence(r));
        std::sort(seqs.begin(), seqs.end());
        sets.push_back(std::move(seqs));
    }
    std::sort(sets.begin(), sets.end());
    std::vector<CatalogDesign> out;
    for (auto& s : sets) {
        const bool w = is_williams(s, t);
        out.push_back({"lsd", out.size(), std::move(s), w});
    }
    return out;
}

/// The Latin square designs that are Williams squares, renumbered.
inline std::vector<CatalogDesign> williams_designs(const CrossoverLayout& layout) {
    std::vector<CatalogDesign> out;
    for (auto& d : latin_square_designs(layout))
        if (d.williams) out.push_back({"wsd", out.size(), std::move(d.sequences), true});
    return out;
}

/// One extra-period design per Latin square design: the last period of
/// every row repeats the previous period, keeping p periods in total.
inline std::vector<CatalogDesign> extra_period_designs(const CrossoverLayout& layout) {
    std::vector<CatalogDesign> out;
    for (const auto& d : latin_square_designs(layout)) {
        std::vector<TreatmentSequence> seqs;
        for (const auto& s : d.sequences) {
            std::string txt = s.str();
            txt.back() = txt[txt.size() - 2];
            seqs.push_back(TreatmentSequence::parse(txt));
        }
        out.push_back({"epd", out.size(), std::move(seqs), false});
    }
    return out;
}

/// Catalog by name: lsd, wsd or epd.
inline std::vector<CatalogDesign> catalog(const std::string& name, const CrossoverLayout& layout) {
    if (name == "lsd") return latin_square_designs(layout);
    if (name == "wsd") return williams_designs(layout);
    if (name == "epd") return extra_period_designs(layout);
    throw ValidationError("unknown catalog \"" + name + "\" (expected lsd, wsd or epd)");
}

}  // namespace xover
