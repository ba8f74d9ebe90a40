#pragma once

#include <cstdint>
#include <vector>

namespace cultivar {

// Dynamic bit vector over 64-bit words. Trailing bits of the last word are
// kept zero so whole-word reductions are safe.
struct BitVec {
    std::vector<uint64_t> words;
    size_t n = 0;

    BitVec() = default;
    explicit BitVec(size_t bits) : words((bits + 63) / 64, 0), n(bits) {}

    size_t size() const { return n; }
    bool get(size_t i) const { return (words[i >> 6] >> (i & 63)) & 1; }
    void set(size_t i, bool v) {
        uint64_t m = uint64_t(1) << (i & 63);
        if (v) words[i >> 6] |= m;
        else words[i >> 6] &= ~m;
    }
    void flip(size_t i) { words[i >> 6] ^= uint64_t(1) << (i & 63); }
    void clear() { for (auto &w : words) w = 0; }
    void resize(size_t bits) {
        words.resize((bits + 63) / 64, 0);
        n = bits;
        if (n & 63) words.back() &= (uint64_t(1) << (n & 63)) - 1;
    }

    void operator^=(const BitVec &o) {
        for (size_t i = 0; i < words.size() && i < o.words.size(); i++) words[i] ^= o.words[i];
    }
    bool operator==(const BitVec &o) const { return n == o.n && words == o.words; }
    bool operator<(const BitVec &o) const {  // for canonical ordering
        if (n != o.n) return n < o.n;
        for (size_t i = words.size(); i-- > 0;)
            if (words[i] != o.words[i]) return words[i] < o.words[i];
        return false;
    }

    bool any() const {
        for (auto w : words) if (w) return true;
        return false;
    }
    size_t popcount() const {
        size_t c = 0;
        for (auto w : words) c += __builtin_popcountll(w);
        return c;
    }
    // parity of popcount(this AND other)
    bool and_parity(const BitVec &o) const {
        uint64_t acc = 0;
        size_t m = words.size() < o.words.size() ? words.size() : o.words.size();
        for (size_t i = 0; i < m; i++) acc ^= words[i] & o.words[i];
        return __builtin_parityll(acc);
    }
    int lowest_set() const {
        for (size_t i = 0; i < words.size(); i++)
            if (words[i]) return int(i * 64 + __builtin_ctzll(words[i]));
        return -1;
    }
    std::vector<int> set_bits() const {
        std::vector<int> out;
        for (size_t i = 0; i < words.size(); i++)
            for (uint64_t w = words[i]; w; w &= w - 1)
                out.push_back(int(i * 64 + __builtin_ctzll(w)));
        return out;
    }
};

// GF(2) row space utilities. Rows all share one length.
struct Gf2Basis {
    std::vector<BitVec> rows;   // reduced rows, each with a unique pivot
    std::vector<int> pivots;    // pivot column of rows[i]

    // Returns true if row was independent (basis grew).
    bool add(BitVec row) {
        reduce(row);
        int p = row.lowest_set();
        if (p < 0) return false;
        rows.push_back(std::move(row));
        pivots.push_back(p);
        return true;
    }
    void reduce(BitVec &row) const {
        for (size_t i = 0; i < rows.size(); i++)
            if (row.get(pivots[i])) row ^= rows[i];
    }
    bool in_span(BitVec row) const {
        reduce(row);
        return !row.any();
    }
    size_t rank() const { return rows.size(); }
};

// Solves x * A = b for x over GF(2), where A's rows are `rows`. Returns the
// row-combination as a bit mask (bit i = rows[i] used), or empty if
// unsolvable.
std::vector<int> gf2_solve(const std::vector<BitVec> &rows, const BitVec &b, bool *ok);

}  // namespace cultivar
