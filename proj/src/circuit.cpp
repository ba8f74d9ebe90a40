#include "cultivar/circuit.h"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cultivar {

Frac::Frac(int64_t n, int64_t d) {
    if (d == 0) throw std::invalid_argument("zero denominator");
    if (d < 0) { n = -n; d = -d; }
    int64_t g = std::gcd(n < 0 ? -n : n, d);
    if (g == 0) g = 1;
    num = n / g;
    den = d / g;
}

std::string Frac::str() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
}

namespace {

struct OpRow {
    Op op;
    OpInfo info;
};

// clang-format off
const std::array<OpRow, NUM_OPS> OP_TABLE = {{
    {Op::I,        {"I",        OpKind::Gate, 1, 0, true,  false}},
    {Op::X,        {"X",        OpKind::Gate, 1, 0, true,  false}},
    {Op::Y,        {"Y",        OpKind::Gate, 1, 0, true,  false}},
    {Op::Z,        {"Z",        OpKind::Gate, 1, 0, true,  false}},
    {Op::H,        {"H",        OpKind::Gate, 1, 0, true,  false}},
    {Op::S,        {"S",        OpKind::Gate, 1, 0, true,  false}},
    {Op::S_DAG,    {"S_DAG",    OpKind::Gate, 1, 0, true,  false}},
    {Op::H_XY,     {"H_XY",     OpKind::Gate, 1, 0, true,  false}},
    {Op::H_XYZ,    {"H_XYZ",    OpKind::Gate, 1, 0, true,  false}},
    {Op::T,        {"T",        OpKind::Gate, 1, 0, false, false}},
    {Op::T_DAG,    {"T_DAG",    OpKind::Gate, 1, 0, false, false}},
    {Op::T_X,      {"T_X",      OpKind::Gate, 1, 0, false, false}},
    {Op::T_X_DAG,  {"T_X_DAG",  OpKind::Gate, 1, 0, false, false}},
    {Op::CX,       {"CX",       OpKind::Gate, 2, 0, true,  false}},
    {Op::CZ,       {"CZ",       OpKind::Gate, 2, 0, true,  false}},
    {Op::SWAP,     {"SWAP",     OpKind::Gate, 2, 0, true,  false}},
    {Op::I2,       {"I2",       OpKind::Gate, 2, 0, true,  false}},
    {Op::CH,       {"CH",       OpKind::Gate, 2, 0, false, false}},
    {Op::CHXY,     {"CHXY",     OpKind::Gate, 2, 0, false, false}},
    {Op::CHXYZ,    {"CHXYZ",    OpKind::Gate, 2, 0, false, false}},
    {Op::CXX,      {"CXX",      OpKind::Gate, 3, 0, true,  false}},
    {Op::I3,       {"I3",       OpKind::Gate, 3, 0, true,  false}},
    {Op::CCX,      {"CCX",      OpKind::Gate, 3, 0, false, false}},
    {Op::CCZ,      {"CCZ",      OpKind::Gate, 3, 0, false, false}},
    {Op::CSWAP,    {"CSWAP",    OpKind::Gate, 3, 0, false, false}},
    {Op::CSWAPHH,  {"CSWAPHH",  OpKind::Gate, 3, 0, false, false}},
    {Op::R,        {"R",        OpKind::Reset, 1, 0, false, false}},
    {Op::RX,       {"RX",       OpKind::Reset, 1, 0, false, false}},
    {Op::M,        {"M",        OpKind::Measure, 1, 0, false, false}},
    {Op::MX,       {"MX",       OpKind::Measure, 1, 0, false, false}},
    {Op::MPP_X,    {"MPP_X",    OpKind::Measure, 0, 0, false, false}},
    {Op::MPP_Z,    {"MPP_Z",    OpKind::Measure, 0, 0, false, false}},
    {Op::DEP1,     {"DEP1",     OpKind::Noise, 1, 1, false, true}},
    {Op::DEP2,     {"DEP2",     OpKind::Noise, 2, 1, false, true}},
    {Op::DEP3,     {"DEP3",     OpKind::Noise, 3, 1, false, true}},
    {Op::XERR,     {"XERR",     OpKind::Noise, 1, 1, false, true}},
    {Op::ZERR,     {"ZERR",     OpKind::Noise, 1, 1, false, true}},
    {Op::MERR,     {"MERR",     OpKind::Noise, 1, 1, false, true}},
    {Op::HERALD,   {"HERALD",   OpKind::Noise, 0, 1, false, true}},
    {Op::CORRX,    {"CORRX",    OpKind::Noise, 0, 1, false, true}},
    {Op::CORRZ,    {"CORRZ",    OpKind::Noise, 0, 1, false, true}},
    {Op::TICK,     {"TICK",     OpKind::Annotation, 0, 0, false, false}},
    {Op::DETECTOR, {"DETECTOR", OpKind::Annotation, 0, 0, false, false}},
    {Op::DETECTOR_SOFT, {"DETECTOR_SOFT", OpKind::Annotation, 0, 0, false, false}},
    {Op::OBSERVABLE_INCLUDE, {"OBSERVABLE_INCLUDE", OpKind::Annotation, 0, 1, false, false}},
    {Op::POSTSELECT, {"POSTSELECT", OpKind::Annotation, 0, 0, false, false}},
    {Op::QUBIT_COORDS, {"QUBIT_COORDS", OpKind::Annotation, 1, 2, false, false}},
}};
// clang-format on

const std::unordered_map<std::string, Op> &name_map() {
    static const std::unordered_map<std::string, Op> m = [] {
        std::unordered_map<std::string, Op> r;
        for (const auto &row : OP_TABLE) r[row.info.name] = row.op;
        return r;
    }();
    return m;
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

const OpInfo &op_info(Op op) { return OP_TABLE[size_t(op)].info; }

Op op_from_name(const std::string &name) {
    auto it = name_map().find(name);
    if (it == name_map().end()) throw std::invalid_argument("unknown instruction: " + name);
    return it->second;
}

int Circuit::num_qubits() const {
    int n = int(coords.size());
    for (const auto &ins : instructions)
        for (const auto &t : ins.targets)
            if (!t.is_rec) n = std::max(n, t.value + 1);
    return n;
}

int Circuit::num_measurements() const {
    int n = 0;
    for (const auto &ins : instructions) {
        if (ins.op == Op::M || ins.op == Op::MX) n += int(ins.targets.size());
        else if (ins.op == Op::MPP_X || ins.op == Op::MPP_Z) n += 1;
    }
    return n;
}

int Circuit::num_detectors() const {
    int n = 0;
    for (const auto &ins : instructions)
        if (ins.op == Op::DETECTOR || ins.op == Op::DETECTOR_SOFT) n++;
    return n;
}

int Circuit::num_observables() const {
    int n = 0;
    for (const auto &ins : instructions)
        if (ins.op == Op::OBSERVABLE_INCLUDE)
            n = std::max(n, int(ins.args[0]) + 1);
    return n;
}

void Circuit::append(Op op, std::initializer_list<int32_t> qubits, std::initializer_list<double> args) {
    Instruction ins;
    ins.op = op;
    ins.args = args;
    for (int32_t q : qubits) ins.targets.push_back(Target::qubit(q));
    instructions.push_back(std::move(ins));
}

void Circuit::set_coord(int32_t q, Coord c) {
    if (int(coords.size()) <= q) coords.resize(q + 1, Coord{Frac(-1), Frac(-1)});
    coords[q] = c;
}

void Circuit::validate() const {
    std::unordered_set<std::string> seen_coords;
    for (size_t i = 0; i < coords.size(); i++) {
        if (coords[i] == Coord{Frac(-1), Frac(-1)}) continue;
        if (!seen_coords.insert(coords[i].str()).second)
            throw ParseError(int(i), "duplicate qubit coordinate " + coords[i].str());
    }

    int meas_so_far = 0;
    // last_meas[q] = 1-based measurement index of the most recent record of q
    std::unordered_map<int32_t, int> last_meas;
    std::unordered_set<int32_t> tick_used;

    for (size_t idx = 0; idx < instructions.size(); idx++) {
        const Instruction &ins = instructions[idx];
        const OpInfo &info = op_info(ins.op);
        int line = int(idx);

        if (int(ins.args.size()) != info.num_args)
            throw ParseError(line, std::string(info.name) + ": expected " +
                                       std::to_string(info.num_args) + " argument(s), got " +
                                       std::to_string(ins.args.size()));
        if (info.arg_is_prob) {
            for (double a : ins.args)
                if (!(a >= 0.0 && a <= 1.0))
                    throw ParseError(line, std::string(info.name) + ": probability out of range");
        }
        if (ins.op == Op::OBSERVABLE_INCLUDE) {
            double k = ins.args[0];
            if (k < 0 || k != int(k))
                throw ParseError(line, "OBSERVABLE_INCLUDE: index must be a nonnegative integer");
        }

        if (info.group > 0) {
            if (ins.targets.empty() || ins.targets.size() % info.group != 0)
                throw ParseError(line, std::string(info.name) + ": target count must be a positive multiple of " +
                                           std::to_string(info.group));
        }
        switch (ins.op) {
            case Op::TICK:
                if (!ins.targets.empty()) throw ParseError(line, "TICK takes no targets");
                break;
            case Op::MPP_X:
            case Op::MPP_Z:
            case Op::HERALD:
            case Op::CORRX:
            case Op::CORRZ:
                if (ins.targets.empty()) throw ParseError(line, std::string(info.name) + ": needs targets");
                break;
            default:
                break;
        }

        bool annotation_refs = ins.op == Op::DETECTOR || ins.op == Op::DETECTOR_SOFT ||
                               ins.op == Op::OBSERVABLE_INCLUDE || ins.op == Op::POSTSELECT;
        for (size_t t = 0; t < ins.targets.size(); t++) {
            const Target &tg = ins.targets[t];
            if (annotation_refs) {
                if (!tg.is_rec) throw ParseError(line, std::string(info.name) + ": targets must be rec[-k]");
            } else if (tg.is_rec) {
                // feed-forward control: rec allowed only in the control slot of CX/CZ
                bool ok = (ins.op == Op::CX || ins.op == Op::CZ) && t % 2 == 0;
                if (!ok) throw ParseError(line, std::string(info.name) + ": rec target not allowed here");
            }
            if (tg.is_rec) {
                if (tg.value >= 0 || -tg.value > meas_so_far)
                    throw ParseError(line, "rec[" + std::to_string(tg.value) + "] out of range (" +
                                               std::to_string(meas_so_far) + " measurements so far)");
            } else if (tg.value < 0) {
                throw ParseError(line, "negative qubit index");
            }
        }
        if (annotation_refs && ins.targets.empty())
            throw ParseError(line, std::string(info.name) + ": needs at least one rec target");

        if (ins.op == Op::MERR) {
            for (const Target &tg : ins.targets)
                if (!last_meas.count(tg.value))
                    throw ParseError(line, "MERR on qubit " + std::to_string(tg.value) +
                                               " with no prior measurement");
        }

        // duplicate targets within one instance
        if (info.group > 1 || info.group == 0) {
            size_t g = info.group == 0 ? ins.targets.size() : size_t(info.group);
            if (info.kind == OpKind::Gate || info.kind == OpKind::Measure) {
                for (size_t base = 0; base + g <= ins.targets.size(); base += g) {
                    for (size_t a = base; a < base + g; a++)
                        for (size_t b = a + 1; b < base + g; b++)
                            if (!ins.targets[a].is_rec && !ins.targets[b].is_rec &&
                                ins.targets[a].value == ins.targets[b].value)
                                throw ParseError(line, std::string(info.name) + ": repeated target " +
                                                           std::to_string(ins.targets[a].value));
                }
            }
        }

        if (ins.op == Op::TICK) {
            tick_used.clear();
        } else if (info.kind == OpKind::Gate || info.kind == OpKind::Reset || info.kind == OpKind::Measure) {
            for (const Target &tg : ins.targets) {
                if (tg.is_rec) continue;
                if (!tick_used.insert(tg.value).second)
                    throw ParseError(line, "qubit " + std::to_string(tg.value) +
                                               " used twice in one time slice");
            }
        }

        if (ins.op == Op::M || ins.op == Op::MX) {
            for (const Target &tg : ins.targets) last_meas[tg.value] = ++meas_so_far;
        } else if (ins.op == Op::MPP_X || ins.op == Op::MPP_Z) {
            ++meas_so_far;
            for (const Target &tg : ins.targets) last_meas[tg.value] = meas_so_far;
        }
    }
}

namespace {

Frac parse_frac(const std::string &tok, int line) {
    auto slash = tok.find('/');
    try {
        if (slash == std::string::npos) return Frac(std::stoll(tok));
        return Frac(std::stoll(tok.substr(0, slash)), std::stoll(tok.substr(slash + 1)));
    } catch (const std::exception &) {
        throw ParseError(line, "bad rational: " + tok);
    }
}

std::vector<std::string> split_ws(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

Circuit parse_circuit(const std::string &text) {
    Circuit c;
    std::istringstream stream(text);
    std::string raw;
    int line_no = 0;
    int meas_so_far = 0;
    std::unordered_map<int32_t, bool> measured;

    while (std::getline(stream, raw)) {
        line_no++;
        auto hash = raw.find('#');
        std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
        if (hash != std::string::npos && raw.compare(hash, 6, "#!meta") == 0) {
            std::string rest = raw.substr(hash + 6);
            auto eq = rest.find('=');
            if (eq == std::string::npos) throw ParseError(line_no, "#!meta needs key=value");
            auto strip = [](std::string s) {
                size_t a = s.find_first_not_of(" \t");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            std::string key = strip(rest.substr(0, eq));
            if (key.empty()) throw ParseError(line_no, "#!meta needs a key");
            c.metadata[key] = strip(rest.substr(eq + 1));
            continue;
        }
        // trim
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t b = line.find_last_not_of(" \t\r");
        line = line.substr(a, b - a + 1);

        std::string head = line;
        std::string arg_str, tgt_str;
        auto paren = line.find('(');
        if (paren != std::string::npos) {
            auto close = line.find(')', paren);
            if (close == std::string::npos) throw ParseError(line_no, "missing ')'");
            head = line.substr(0, paren);
            arg_str = line.substr(paren + 1, close - paren - 1);
            tgt_str = line.substr(close + 1);
        } else {
            auto sp = line.find_first_of(" \t");
            if (sp != std::string::npos) {
                head = line.substr(0, sp);
                tgt_str = line.substr(sp + 1);
            }
        }

        Op op;
        try {
            op = op_from_name(head);
        } catch (const std::invalid_argument &e) {
            throw ParseError(line_no, e.what());
        }
        const OpInfo &info = op_info(op);

        std::vector<std::string> arg_toks;
        {
            std::string cur;
            for (char ch : arg_str) {
                if (ch == ',') { arg_toks.push_back(cur); cur.clear(); }
                else cur += ch;
            }
            if (!cur.empty() || !arg_toks.empty()) arg_toks.push_back(cur);
        }

        if (op == Op::QUBIT_COORDS) {
            if (arg_toks.size() != 2) throw ParseError(line_no, "QUBIT_COORDS needs (x, y)");
            Coord coord{parse_frac(split_ws(arg_toks[0]).at(0), line_no),
                        parse_frac(split_ws(arg_toks[1]).at(0), line_no)};
            auto toks = split_ws(tgt_str);
            if (toks.size() != 1) throw ParseError(line_no, "QUBIT_COORDS takes one qubit");
            int32_t q;
            try { q = std::stoi(toks[0]); } catch (...) { throw ParseError(line_no, "bad qubit index: " + toks[0]); }
            if (q < 0) throw ParseError(line_no, "negative qubit index");
            c.set_coord(q, coord);
            continue;
        }

        Instruction ins;
        ins.op = op;
        if (int(arg_toks.size()) != info.num_args)
            throw ParseError(line_no, std::string(info.name) + ": expected " + std::to_string(info.num_args) +
                                          " argument(s), got " + std::to_string(arg_toks.size()));
        for (const auto &tok : arg_toks) {
            auto ws = split_ws(tok);
            if (ws.size() != 1) throw ParseError(line_no, "bad argument");
            char *end = nullptr;
            double v = std::strtod(ws[0].c_str(), &end);
            if (end == ws[0].c_str() || *end != '\0') throw ParseError(line_no, "bad argument: " + ws[0]);
            ins.args.push_back(v);
        }
        if (info.arg_is_prob)
            for (double v : ins.args)
                if (!(v >= 0.0 && v <= 1.0))
                    throw ParseError(line_no, std::string(info.name) + ": probability out of range");

        for (const auto &tok : split_ws(tgt_str)) {
            if (tok.rfind("rec[", 0) == 0) {
                if (tok.back() != ']') throw ParseError(line_no, "bad rec target: " + tok);
                int32_t off;
                try { off = std::stoi(tok.substr(4, tok.size() - 5)); }
                catch (...) { throw ParseError(line_no, "bad rec target: " + tok); }
                if (off >= 0) throw ParseError(line_no, "rec offset must be negative");
                if (-off > meas_so_far)
                    throw ParseError(line_no, "rec[" + std::to_string(off) + "] out of range (" +
                                               std::to_string(meas_so_far) + " measurements so far)");
                ins.targets.push_back(Target::rec(off));
            } else {
                int32_t q;
                try { q = std::stoi(tok); } catch (...) { throw ParseError(line_no, "bad target: " + tok); }
                if (q < 0) throw ParseError(line_no, "negative qubit index");
                ins.targets.push_back(Target::qubit(q));
            }
        }

        if (info.group > 0 && (ins.targets.empty() || ins.targets.size() % info.group != 0))
            throw ParseError(line_no, std::string(info.name) + ": target count must be a positive multiple of " +
                                          std::to_string(info.group));
        bool annotation_refs = op == Op::DETECTOR || op == Op::DETECTOR_SOFT ||
                               op == Op::OBSERVABLE_INCLUDE || op == Op::POSTSELECT;
        for (size_t t = 0; t < ins.targets.size(); t++) {
            if (annotation_refs && !ins.targets[t].is_rec)
                throw ParseError(line_no, std::string(info.name) + ": targets must be rec[-k]");
            if (!annotation_refs && ins.targets[t].is_rec) {
                bool ok = (op == Op::CX || op == Op::CZ) && t % 2 == 0;
                if (!ok) throw ParseError(line_no, std::string(info.name) + ": rec target not allowed here");
            }
        }
        if (annotation_refs && ins.targets.empty())
            throw ParseError(line_no, std::string(info.name) + ": needs at least one rec target");
        if (op == Op::MERR)
            for (const Target &tg : ins.targets)
                if (!measured.count(tg.value))
                    throw ParseError(line_no, "MERR on qubit " + std::to_string(tg.value) +
                                                " with no prior measurement");

        if (op == Op::M || op == Op::MX) {
            meas_so_far += int(ins.targets.size());
            for (const Target &tg : ins.targets) measured[tg.value] = true;
        } else if (op == Op::MPP_X || op == Op::MPP_Z) {
            meas_so_far += 1;
            for (const Target &tg : ins.targets) measured[tg.value] = true;
        }
        c.instructions.push_back(std::move(ins));
    }
    return c;
}

std::string serialize_circuit(const Circuit &c) {
    std::string out;
    for (const auto &[k, v] : c.metadata) out += "#!meta " + k + " = " + v + "\n";
    for (size_t q = 0; q < c.coords.size(); q++) {
        if (c.coords[q] == Coord{Frac(-1), Frac(-1)}) continue;
        out += "QUBIT_COORDS(" + c.coords[q].x.str() + ", " + c.coords[q].y.str() + ") " +
               std::to_string(q) + "\n";
    }
    for (const auto &ins : c.instructions) {
        const OpInfo &info = op_info(ins.op);
        out += info.name;
        if (!ins.args.empty()) {
            out += "(";
            for (size_t i = 0; i < ins.args.size(); i++) {
                if (i) out += ", ";
                out += fmt_double(ins.args[i]);
            }
            out += ")";
        }
        for (const auto &t : ins.targets) {
            out += " ";
            out += t.is_rec ? "rec[" + std::to_string(t.value) + "]" : std::to_string(t.value);
        }
        out += "\n";
    }
    return out;
}

int64_t count_ops(const Circuit &c, const std::string &what) {
    static const std::unordered_map<std::string, OpKind> kinds = {
        {"gate", OpKind::Gate}, {"reset", OpKind::Reset}, {"measure", OpKind::Measure},
        {"noise", OpKind::Noise}, {"annotation", OpKind::Annotation},
    };
    auto kind_it = kinds.find(what);
    int64_t n = 0;
    if (kind_it != kinds.end()) {
        for (const auto &ins : c.instructions)
            if (op_info(ins.op).kind == kind_it->second) n += ins.num_instances();
        return n;
    }
    Op op = op_from_name(what);
    for (const auto &ins : c.instructions)
        if (ins.op == op) n += ins.num_instances();
    return n;
}

}  // namespace cultivar
