#include "mmasr/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace mmasr {

EditAlignment align_tokens(const std::vector<std::string>& ref,
                           const std::vector<std::string>& hyp) {
    const std::size_t m = ref.size(), n = hyp.size();
    std::vector<std::size_t> dp((m + 1) * (n + 1), 0);
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (n + 1) + j]; };
    for (std::size_t i = 0; i <= m; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= n; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }
    }

    EditAlignment out;
    std::vector<EditOp> rev;
    std::size_t i = m, j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i, j) == at(i - 1, j - 1)) {
            rev.push_back({EditOpKind::Match, i - 1, j - 1});
            --i, --j;
        } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
            rev.push_back({EditOpKind::Substitute, i - 1, j - 1});
            --i, --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            rev.push_back({EditOpKind::Delete, i - 1, 0});
            --i;
        } else {
            rev.push_back({EditOpKind::Insert, 0, j - 1});
            --j;
        }
    }
    out.ops.assign(rev.rbegin(), rev.rend());
    for (const auto& op : out.ops) {
        switch (op.kind) {
            case EditOpKind::Match: ++out.matches; break;
            case EditOpKind::Substitute: ++out.substitutions; break;
            case EditOpKind::Delete: ++out.deletions; break;
            case EditOpKind::Insert: ++out.insertions; break;
        }
    }
    return out;
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    if (ref.empty()) throw InputError("wer requires a non-empty reference");
    const auto alignment = align_tokens(ref, hyp);
    return static_cast<double>(alignment.cost()) / static_cast<double>(ref.size());
}

double Rate::value() const {
    if (!defined()) throw ContractError("rate is undefined (zero denominator)");
    return static_cast<double>(num) / static_cast<double>(den);
}

std::vector<RecoveryRecord> mark_recovery(const std::vector<std::string>& ref,
                                          const std::vector<std::string>& hyp,
                                          const std::set<std::size_t>& masked_indices,
                                          const EditAlignment& alignment,
                                          const DecodeResult* attn) {
    if (attn && attn->steps.size() < hyp.size()) {
        throw ContractError("attention trace shorter than the hypothesis: " +
                            std::to_string(attn->steps.size()) + " < " +
                            std::to_string(hyp.size()));
    }
    std::vector<RecoveryRecord> records;
    for (std::size_t idx : masked_indices) {
        if (idx >= ref.size()) {
            throw InputError("masked index " + std::to_string(idx) +
                             " out of range for a reference of length " +
                             std::to_string(ref.size()));
        }
        RecoveryRecord rec;
        rec.masked_index = idx;
        rec.ref_word = ref[idx];
        for (const auto& op : alignment.ops) {
            if ((op.kind == EditOpKind::Match || op.kind == EditOpKind::Substitute) &&
                op.ref_index == idx) {
                rec.hyp_step = op.hyp_index;
                rec.recovered = op.kind == EditOpKind::Match;
                break;
            }
        }
        if (attn && rec.hyp_step) {
            rec.visual_weight = attn->steps[*rec.hyp_step].visual_w;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

Rate recovery_rate(const std::vector<RecoveryRecord>& records) {
    Rate rate;
    for (const auto& r : records) {
        ++rate.den;
        rate.num += r.recovered ? 1 : 0;
    }
    return rate;
}

Rate grounding_rate(const std::vector<RecoveryRecord>& records, double threshold) {
    Rate rate;
    for (const auto& r : records) {
        if (!r.recovered || r.visual_weight < 0) continue;
        ++rate.den;
        rate.num += r.visual_weight > threshold ? 1 : 0;
    }
    return rate;
}

std::vector<AttentionProfilePoint> attention_profile(
    const std::vector<const DecodeResult*>& traces,
    const std::vector<std::vector<std::size_t>>& onset_steps, int window) {
    if (traces.size() != onset_steps.size()) {
        throw ContractError("attention_profile: trace and onset list sizes differ");
    }
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t u = 0; u < traces.size(); ++u) {
        const auto* trace = traces[u];
        if (!trace->hierarchical) {
            throw ContractError("attention_profile requires hierarchical decode traces");
        }
        for (std::size_t onset : onset_steps[u]) {
            for (int off = -window; off <= window; ++off) {
                const long long step = static_cast<long long>(onset) + off;
                if (step < 0 || step >= static_cast<long long>(trace->steps.size())) continue;
                auto& slot = acc[off];
                slot.first += trace->steps[static_cast<std::size_t>(step)].visual_w;
                slot.second += 1;
            }
        }
    }
    std::vector<AttentionProfilePoint> out;
    for (int off = -window; off <= window; ++off) {
        auto it = acc.find(off);
        if (it == acc.end()) {
            out.push_back({off, 0.0, 0});
        } else {
            out.push_back({off, it->second.first / static_cast<double>(it->second.second),
                           it->second.second});
        }
    }
    return out;
}

void write_profile_csv(const std::vector<AttentionProfilePoint>& profile,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write profile csv: " + path);
    out << "offset,mean_visual_weight,count\n";
    out.precision(17);
    for (const auto& p : profile) {
        out << p.offset << "," << p.mean_visual_weight << "," << p.count << "\n";
    }
}

std::vector<AttentionProfilePoint> read_profile_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing profile csv: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "offset,mean_visual_weight,count") {
        throw FormatError("bad profile csv header in " + path);
    }
    std::vector<AttentionProfilePoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        AttentionProfilePoint p;
        char comma = 0;
        ss >> p.offset >> comma >> p.mean_visual_weight >> comma >> p.count;
        if (!ss) throw FormatError("bad profile csv row in " + path + ": " + line);
        out.push_back(p);
    }
    return out;
}

}  // namespace mmasr
