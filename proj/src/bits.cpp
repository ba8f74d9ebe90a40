#include "cultivar/bits.h"

namespace cultivar {

std::vector<int> gf2_solve(const std::vector<BitVec> &rows, const BitVec &b, bool *ok) {
    struct Aug {
        BitVec row;
        BitVec mask;
    };
    std::vector<Aug> basis;
    size_t nr = rows.size();
    for (size_t i = 0; i < nr; i++) {
        Aug a{rows[i], BitVec(nr)};
        a.mask.set(i, true);
        for (const auto &e : basis) {
            int p = e.row.lowest_set();
            if (p >= 0 && a.row.get(size_t(p))) {
                a.row ^= e.row;
                a.mask ^= e.mask;
            }
        }
        if (a.row.any()) basis.push_back(std::move(a));
    }
    BitVec r = b, m(nr);
    for (const auto &e : basis) {
        int p = e.row.lowest_set();
        if (p >= 0 && r.get(size_t(p))) {
            r ^= e.row;
            m ^= e.mask;
        }
    }
    if (r.any()) {
        *ok = false;
        return {};
    }
    *ok = true;
    return m.set_bits();
}

}  // namespace cultivar
