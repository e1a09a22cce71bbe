#include "dcppd/reliance.hpp"

#include <cstring>

#include "json.hpp"

#include "dcppd/serialize.hpp"

namespace dcppd::rel {

double region_mass(const AttentionTrace& trace, const std::vector<int>& region) {
    if (region.empty()) throw RegionError("region_mass: empty region");
    const std::int64_t T = trace.step_count(), S = trace.prompt_len();
    if (T < 1) throw DegenerateTraceError("region_mass: trace has no steps");
    double acc = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        double m = 0.0;
        for (int i : region) {
            if (i < 0 || i >= S) throw RegionError("region_mass: position outside prompt");
            m += trace.steps.data[t * S + i];
        }
        acc += m / static_cast<double>(region.size());
    }
    return acc / static_cast<double>(T);
}

RelianceResult reliance_scores(double m_text, double m_image) {
    if (m_text + m_image <= 0.0)
        throw DegenerateTraceError("reliance_scores: both region masses are zero");
    RelianceResult r;
    r.m_text = m_text;
    r.m_image = m_image;
    r.s_text = m_text / (m_text + m_image);
    r.s_image = 1.0 - r.s_text;
    return r;
}

RelianceResult trace_reliance(const AttentionTrace& trace) {
    return reliance_scores(region_mass(trace, trace.r_text), region_mass(trace, trace.r_image));
}

metrics::MeanStd reliance_report(const std::vector<double>& s_text_values) {
    if (s_text_values.size() < 2)
        throw std::invalid_argument("reliance_report: need at least 2 traces");
    return metrics::mean_std(s_text_values);
}

void save_trace(const std::filesystem::path& path, const AttentionTrace& trace) {
    nlohmann::ordered_json header;
    header["version"] = 1;
    header["steps"] = trace.step_count();
    header["prompt_len"] = trace.prompt_len();
    header["r_text"] = trace.r_text;
    header["r_image"] = trace.r_image;
    const std::string hs = header.dump();

    std::vector<unsigned char> out;
    out.push_back('D');
    out.push_back('C');
    out.push_back('P');
    out.push_back('A');
    write_u32(out, 1);
    write_u64(out, hs.size());
    out.insert(out.end(), hs.begin(), hs.end());
    write_f32(out, trace.steps.data);
    write_file(path, out);
}

AttentionTrace load_trace(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "DCPA", 4) != 0)
        throw std::runtime_error("not a trace file: " + path.string());
    const std::uint64_t hlen = read_u64(bytes.data() + 8);
    const auto header = nlohmann::ordered_json::parse(
        std::string(reinterpret_cast<const char*>(bytes.data() + 16), hlen));
    AttentionTrace t;
    const std::int64_t T = header.at("steps").get<std::int64_t>();
    const std::int64_t S = header.at("prompt_len").get<std::int64_t>();
    t.r_text = header.at("r_text").get<std::vector<int>>();
    t.r_image = header.at("r_image").get<std::vector<int>>();
    t.steps = Tensor({T, S});
    read_f32(bytes.data() + 16 + hlen, static_cast<std::size_t>(T * S), t.steps.data);
    return t;
}

}  // namespace dcppd::rel
