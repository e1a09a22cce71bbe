#include "dcppd/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

#include "dcppd/report_grammar.hpp"
#include "dcppd/rng.hpp"
#include "dcppd/serialize.hpp"

namespace dcppd::synth {

namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kStyleStream = 0x5354594cULL;   // per-item style seed
constexpr std::uint64_t kVolumeStream = 0x564f4c00ULL;  // background/placement

int kind_slot(FindingKind k) {
    switch (k) {
        case FindingKind::nodule: return 0;
        case FindingKind::consolidation: return 1;
        case FindingKind::ggo: return 2;
        case FindingKind::pleural_effusion: return 3;
    }
    return -1;
}

json config_to_json(const DatasetConfig& c) {
    json j;
    j["grid"] = c.grid;
    json w = json::array();
    for (const auto& win : c.windows) w.push_back({{"name", win.name}, {"lo", win.lo}, {"hi", win.hi}});
    j["windows"] = w;
    json prev, ext, inten;
    for (FindingKind k : kAllKinds) {
        prev[kind_name(k)] = c.prevalence[kind_slot(k)];
        ext[kind_name(k)] = c.extent[kind_slot(k)];
        inten[kind_name(k)] = c.intensity[kind_slot(k)];
    }
    j["prevalence"] = prev;
    j["extent"] = ext;
    j["intensity"] = inten;
    j["noise"] = c.noise;
    j["full_question_sets"] = c.full_question_sets;
    j["unstructured_style"] = c.unstructured_style;
    return j;
}

DatasetConfig config_from_json(const json& j) {
    DatasetConfig c;
    c.grid = j.at("grid").get<int>();
    c.windows.clear();
    for (const auto& w : j.at("windows"))
        c.windows.push_back({w.at("lo").get<double>(), w.at("hi").get<double>(),
                             w.at("name").get<std::string>()});
    for (FindingKind k : kAllKinds) {
        c.prevalence[kind_slot(k)] = j.at("prevalence").at(kind_name(k)).get<double>();
        c.extent[kind_slot(k)] = j.at("extent").at(kind_name(k)).get<int>();
        c.intensity[kind_slot(k)] = j.at("intensity").at(kind_name(k)).get<double>();
    }
    c.noise = j.at("noise").get<double>();
    c.full_question_sets = j.at("full_question_sets").get<bool>();
    c.unstructured_style = j.at("unstructured_style").get<bool>();
    return c;
}

}  // namespace

void DatasetConfig::validate() const {
    if (grid < 8) throw ConfigError("grid must be >= 8");
    if (windows.empty()) throw ConfigError("at least one window required");
    for (const auto& w : windows)
        if (!(w.lo < w.hi))
            throw ConfigError("window '" + w.name + "': lo must be < hi");
    for (FindingKind k : kAllKinds) {
        const double p = prevalence[kind_slot(k)];
        if (p < 0.0 || p > 1.0)
            throw ConfigError("prevalence for " + kind_name(k) + " outside [0,1]");
        const int e = extent[kind_slot(k)];
        if (e < 1) throw ConfigError("extent for " + kind_name(k) + " must be >= 1");
        const double in = intensity[kind_slot(k)];
        if (!(in > 0.0 && in <= 1.0))
            throw ConfigError("intensity for " + kind_name(k) + " outside (0,1]");
    }
    // every placement region must fit the finding footprint
    for (FindingKind k : kAllKinds) {
        const int pad = extent[kind_slot(k)] + 1;
        auto check = [&](const Region& r) {
            for (int a = 0; a < 3; ++a)
                if (r.hi[a] - r.lo[a] <= 2 * pad)
                    throw ConfigError("grid too small for extent of " + kind_name(k));
        };
        if (kind_has_lobes(k)) {
            for (Lobe l : kAllLobes) check(lobe_region(l, grid));
        } else {
            for (Laterality s : {Laterality::left, Laterality::right}) {
                Region r = side_region(s, grid);
                r.lo[1] = 2 * grid / 3;  // effusion sits in the dependent band
                check(r);
            }
        }
    }
}

Region side_region(Laterality s, int grid) {
    const std::int64_t g = grid, half = grid / 2;
    if (s == Laterality::left) return {{0, 0, 0}, {half, g, g}};
    return {{half, 0, 0}, {g, g, g}};
}

Region lobe_region(Lobe l, int grid) {
    const std::int64_t g = grid;
    Region r = side_region(lobe_side(l), grid);
    switch (l) {
        case Lobe::LUL: r.lo[2] = 0; r.hi[2] = g / 2; break;
        case Lobe::LLL: r.lo[2] = g / 2; r.hi[2] = g; break;
        case Lobe::RUL: r.lo[2] = 0; r.hi[2] = g / 3; break;
        case Lobe::RML: r.lo[2] = g / 3; r.hi[2] = 2 * g / 3; break;
        case Lobe::RLL: r.lo[2] = 2 * g / 3; r.hi[2] = g; break;
    }
    return r;
}

LabelVector labels_qs1(const std::vector<FindingSpec>& findings, const QuestionSet& qs1) {
    LabelVector v = zero_labels(QuestionSetId::QS1, qs1.arity());
    for (const auto& f : findings) {
        const int i = qs1_index(qs1, f.kind);
        if (i >= 0) v.values[i] = 1;
    }
    return v;
}

LabelVector labels_qs2(const std::vector<FindingSpec>& findings) {
    LabelVector v = zero_labels(QuestionSetId::QS2, 8);
    for (const auto& f : findings) v.values[qs2_index(f.kind, f.laterality)] = 1;
    return v;
}

LabelVector labels_qs3(const std::vector<FindingSpec>& findings) {
    LabelVector v = zero_labels(QuestionSetId::QS3, 15);
    for (const auto& f : findings)
        if (f.lobe) v.values[qs3_index(f.kind, *f.lobe)] = 1;
    return v;
}

GroundTruth ground_truth_from(std::vector<FindingSpec> findings, const QuestionCatalog& cat) {
    GroundTruth gt;
    gt.qs1 = labels_qs1(findings, cat.qs1);
    gt.qs2 = labels_qs2(findings);
    gt.qs3 = labels_qs3(findings);
    gt.findings = std::move(findings);
    return gt;
}

bool hierarchy_consistent(const GroundTruth& gt, const QuestionCatalog& cat) {
    return labels_hierarchy_consistent(gt.qs1, gt.qs2, gt.qs3, cat);
}

std::vector<FindingSpec> sample_findings(std::uint64_t seed, const DatasetConfig& config) {
    config.validate();
    std::vector<FindingSpec> findings;
    for (FindingKind k : kAllKinds) {
        const int slot = kind_slot(k);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(slot)));
        if (!rng.bernoulli(config.prevalence[slot])) continue;
        FindingSpec f;
        f.kind = k;
        if (kind_has_lobes(k)) {
            f.lobe = kAllLobes[rng.uniform_int(static_cast<int>(kAllLobes.size()))];
            f.laterality = lobe_side(*f.lobe);
        } else {
            f.laterality = rng.bernoulli(0.5) ? Laterality::left : Laterality::right;
        }
        f.extent = config.extent[slot];
        f.intensity = std::min(1.0, config.intensity[slot] * rng.uniform(0.9, 1.1));
        findings.push_back(f);
    }
    return findings;
}

namespace {

// low-frequency texture: trilinear interpolation of a coarse seeded grid
struct SmoothNoise {
    static constexpr int kCoarse = 4;
    std::array<double, kCoarse * kCoarse * kCoarse> grid;

    explicit SmoothNoise(Rng& rng) {
        for (auto& v : grid) v = rng.uniform(-1.0, 1.0);
    }
    double at(double fx, double fy, double fz) const {
        auto sample = [&](int x, int y, int z) {
            x = std::clamp(x, 0, kCoarse - 1);
            y = std::clamp(y, 0, kCoarse - 1);
            z = std::clamp(z, 0, kCoarse - 1);
            return grid[(x * kCoarse + y) * kCoarse + z];
        };
        const double gx = fx * (kCoarse - 1), gy = fy * (kCoarse - 1), gz = fz * (kCoarse - 1);
        const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy), z0 = static_cast<int>(gz);
        const double tx = gx - x0, ty = gy - y0, tz = gz - z0;
        double acc = 0.0;
        for (int dx = 0; dx <= 1; ++dx)
            for (int dy = 0; dy <= 1; ++dy)
                for (int dz = 0; dz <= 1; ++dz) {
                    const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                    acc += w * sample(x0 + dx, y0 + dy, z0 + dz);
                }
        return acc;
    }
};

std::array<std::int64_t, 3> place_center(const FindingSpec& f, int grid, Rng& rng) {
    Region r{};
    if (f.lobe) {
        r = lobe_region(*f.lobe, grid);
    } else if (f.kind == FindingKind::pleural_effusion) {
        r = side_region(f.laterality, grid);
        r.lo[1] = 2 * grid / 3;
    } else {
        r = side_region(f.laterality, grid);
    }
    const std::int64_t pad = f.extent + 1;
    std::array<std::int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
        const std::int64_t lo = r.lo[a] + pad, hi = r.hi[a] - pad;
        if (hi <= lo) throw ConfigError("grid too small for extent of " + kind_name(f.kind));
        c[a] = lo + rng.uniform_int(static_cast<int>(hi - lo));
    }
    return c;
}

void paint_blob(Tensor& raw, int grid, const FindingSpec& f,
                const std::array<std::int64_t, 3>& c) {
    const double sigma = 0.6 * f.extent;
    const std::int64_t reach = static_cast<std::int64_t>(std::ceil(1.8 * f.extent));
    for (std::int64_t x = std::max<std::int64_t>(0, c[0] - reach);
         x <= std::min<std::int64_t>(grid - 1, c[0] + reach); ++x)
        for (std::int64_t y = std::max<std::int64_t>(0, c[1] - reach);
             y <= std::min<std::int64_t>(grid - 1, c[1] + reach); ++y)
            for (std::int64_t z = std::max<std::int64_t>(0, c[2] - reach);
                 z <= std::min<std::int64_t>(grid - 1, c[2] + reach); ++z) {
                const double dx = static_cast<double>(x - c[0]);
                const double dy = static_cast<double>(y - c[1]);
                const double dz = static_cast<double>(z - c[2]);
                const double d2 = dx * dx + dy * dy + dz * dz;
                raw.data[(x * grid + y) * grid + z] +=
                    f.intensity * std::exp(-d2 / (2.0 * sigma * sigma));
            }
}

}  // namespace

std::pair<PhantomVolume, GroundTruth> generate_phantom(std::uint64_t seed,
                                                       const DatasetConfig& config) {
    config.validate();
    const int g = config.grid;
    auto findings = sample_findings(seed, config);

    Rng vol_rng(derive_seed(seed, kVolumeStream));
    SmoothNoise smooth(vol_rng);
    Tensor raw({g, g, g});
    for (std::int64_t x = 0; x < g; ++x)
        for (std::int64_t y = 0; y < g; ++y)
            for (std::int64_t z = 0; z < g; ++z) {
                const double s = smooth.at(x / double(g - 1), y / double(g - 1), z / double(g - 1));
                raw.data[(x * g + y) * g + z] =
                    0.15 + config.noise * s + 0.3 * config.noise * vol_rng.uniform(-1.0, 1.0);
            }

    // one blob per finding; placement stream keyed by (seed, finding kind)
    for (const auto& f : findings) {
        Rng place_rng(derive_seed(seed, kVolumeStream, static_cast<std::uint64_t>(kind_slot(f.kind)) + 1));
        const auto c = place_center(f, g, place_rng);
        paint_blob(raw, g, f, c);
    }
    for (auto& v : raw.data) v = std::clamp(v, 0.0, 1.0);

    PhantomVolume vol = apply_windows(raw, config.windows);
    GroundTruth gt = ground_truth_from(std::move(findings), config.catalog());
    return {std::move(vol), std::move(gt)};
}

PhantomVolume apply_windows(const Tensor& raw, const std::vector<WindowSpec>& windows) {
    require(raw.shape.size() == 3, "apply_windows: raw grid must be 3-D");
    for (const auto& w : windows)
        if (!(w.lo < w.hi)) throw ConfigError("window '" + w.name + "': lo must be < hi");

    const std::int64_t n = raw.numel();
    const std::int64_t C = static_cast<std::int64_t>(windows.size());
    PhantomVolume out;
    out.data = Tensor({C, raw.shape[0], raw.shape[1], raw.shape[2]});
    for (std::int64_t c = 0; c < C; ++c) {
        const double lo = windows[c].lo, inv = 1.0 / (windows[c].hi - windows[c].lo);
        for (std::int64_t i = 0; i < n; ++i)
            out.data.data[c * n + i] = std::clamp((raw.data[i] - lo) * inv, 0.0, 1.0);
        out.channel_descriptors.push_back(windows[c].name);
    }
    return out;
}

namespace {

int location_rank(const FindingSpec& f) {
    // laterality-only first (right, then left), then lobes in question order
    if (!f.lobe) return f.laterality == Laterality::right ? 0 : 1;
    switch (*f.lobe) {
        case Lobe::RUL: return 2;
        case Lobe::RML: return 3;
        case Lobe::RLL: return 4;
        case Lobe::LUL: return 5;
        case Lobe::LLL: return 6;
    }
    return 7;
}

}  // namespace

StructuredReport render_report(const GroundTruth& gt, std::uint64_t style_seed,
                               const DatasetConfig& config) {
    const QuestionCatalog cat = config.catalog();
    const GroundTruth check = ground_truth_from(gt.findings, cat);
    if (!(check.qs1 == gt.qs1 && check.qs2 == gt.qs2 && check.qs3 == gt.qs3))
        throw InvariantError("ground truth labels are not the label function of its findings");
    if (!hierarchy_consistent(gt, cat))
        throw InvariantError("ground truth violates hierarchy consistency");

    // kinds in QS1 question order
    std::vector<FindingKind> kind_order;
    for (int i = 0; i < cat.qs1.arity(); ++i)
        if (auto k = qs1_kind(cat.qs1, i)) kind_order.push_back(*k);

    Rng style(style_seed);
    std::vector<std::pair<FindingKind, std::string>> sentences;
    for (FindingKind k : kind_order) {
        std::vector<FindingSpec> of_kind;
        for (const auto& f : gt.findings)
            if (f.kind == k) of_kind.push_back(f);
        if (of_kind.empty()) {
            grammar::Fact f{k, false, std::nullopt, std::nullopt};
            sentences.emplace_back(k, grammar::render_sentence(f, style.uniform_int(grammar::kStyleVariants)));
            continue;
        }
        std::sort(of_kind.begin(), of_kind.end(), [](const FindingSpec& a, const FindingSpec& b) {
            return location_rank(a) < location_rank(b);
        });
        std::set<std::string> seen;
        for (const auto& f : of_kind) {
            grammar::Fact fact{f.kind, true, f.laterality, f.lobe};
            const std::string s =
                grammar::render_sentence(fact, style.uniform_int(grammar::kStyleVariants));
            // duplicate locations collapse to one sentence
            const std::string key = grammar::render_sentence(fact, 0);
            if (seen.insert(key).second) sentences.emplace_back(k, s);
        }
    }

    StructuredReport rep;
    if (config.unstructured_style) {
        std::vector<std::string> all;
        for (auto& [k, s] : sentences) all.push_back(s);
        // Fisher-Yates with the style stream
        for (int i = static_cast<int>(all.size()) - 1; i > 0; --i)
            std::swap(all[i], all[style.uniform_int(i + 1)]);
        rep.sections.emplace_back("findings", all);
    } else {
        std::vector<std::string> lungs, pleura;
        for (auto& [k, s] : sentences)
            (k == FindingKind::pleural_effusion ? pleura : lungs).push_back(s);
        rep.sections.emplace_back("lungs", lungs);
        rep.sections.emplace_back("pleura", pleura);
    }
    std::string flat;
    for (const auto& [name, list] : rep.sections)
        for (const auto& s : list) {
            if (!flat.empty()) flat += " ";
            flat += s;
        }
    rep.flat_text = flat;
    return rep;
}

std::string sample_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

std::uint64_t item_seed(std::uint64_t dataset_seed, int index) {
    return derive_seed(dataset_seed, static_cast<std::uint64_t>(index));
}

void save_volume(const std::filesystem::path& path, const PhantomVolume& v) {
    std::vector<unsigned char> out;
    out.push_back('D');
    out.push_back('C');
    out.push_back('P');
    out.push_back('V');
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(v.data.shape.size()));
    for (auto d : v.data.shape) write_u32(out, static_cast<std::uint32_t>(d));
    write_f32(out, v.data.data);
    write_file(path, out);
}

PhantomVolume read_volume(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "DCPV", 4) != 0)
        throw std::runtime_error("not a volume file: " + path.string());
    const std::uint32_t version = read_u32(bytes.data() + 4);
    if (version != 1) throw std::runtime_error("unsupported volume version");
    const std::uint32_t ndim = read_u32(bytes.data() + 8);
    PhantomVolume v;
    std::size_t at = 12;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        v.data.shape.push_back(read_u32(bytes.data() + at));
        at += 4;
    }
    const auto n = static_cast<std::size_t>(v.data.numel());
    if (at + 4 * n > bytes.size()) throw std::runtime_error("truncated volume file");
    read_f32(bytes.data() + at, n, v.data.data);
    return v;
}

namespace {

json labels_to_json(const GroundTruth& gt, const QuestionCatalog& cat) {
    json j;
    auto dump = [&](const LabelVector& v, const QuestionSet& qs) {
        json m;
        for (int i = 0; i < qs.arity(); ++i) m[qs.questions[i]] = static_cast<int>(v.values[i]);
        return m;
    };
    j["qs1"] = dump(gt.qs1, cat.qs1);
    j["qs2"] = dump(gt.qs2, cat.qs2);
    j["qs3"] = dump(gt.qs3, cat.qs3);
    return j;
}

LabelVector labels_from_json(const json& m, const QuestionSet& qs) {
    LabelVector v = zero_labels(qs.id, qs.arity());
    for (int i = 0; i < qs.arity(); ++i)
        v.values[i] = static_cast<std::uint8_t>(m.at(qs.questions[i]).get<int>());
    return v;
}

json report_to_json(const StructuredReport& r) {
    json j;
    json sections;
    for (const auto& [name, list] : r.sections) sections[name] = list;
    j["sections"] = sections;
    j["flat_text"] = r.flat_text;
    return j;
}

StructuredReport report_from_json(const json& j) {
    StructuredReport r;
    for (const auto& [name, list] : j.at("sections").items()) {
        std::vector<std::string> sents;
        for (const auto& s : list) sents.push_back(s.get<std::string>());
        r.sections.emplace_back(name, std::move(sents));
    }
    r.flat_text = j.at("flat_text").get<std::string>();
    return r;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::vector<unsigned char> bytes(s.begin(), s.end());
    write_file(p, bytes);
}

}  // namespace

Dataset make_dataset(int n, std::uint64_t seed, const DatasetConfig& config,
                     const std::filesystem::path& out_dir) {
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    config.validate();
    const QuestionCatalog cat = config.catalog();

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "volumes", ec);
    std::filesystem::create_directories(out_dir / "labels", ec);
    std::filesystem::create_directories(out_dir / "reports", ec);
    if (!std::filesystem::is_directory(out_dir / "volumes"))
        throw std::runtime_error("cannot create dataset directory: " + out_dir.string());

    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    ds.dir = out_dir;

    std::vector<std::array<int, 2>> dist_qs1(cat.qs1.arity(), {0, 0});
    std::vector<std::array<int, 2>> dist_qs2(cat.qs2.arity(), {0, 0});
    std::vector<std::array<int, 2>> dist_qs3(cat.qs3.arity(), {0, 0});

    for (int i = 0; i < n; ++i) {
        const std::uint64_t s = item_seed(seed, i);
        auto [vol, gt] = generate_phantom(s, config);
        const StructuredReport report = render_report(gt, derive_seed(s, kStyleStream), config);
        const std::string id = sample_id(i);

        save_volume(out_dir / "volumes" / (id + ".vol"), vol);
        write_text(out_dir / "labels" / (id + ".json"), labels_to_json(gt, cat).dump(2) + "\n");
        write_text(out_dir / "reports" / (id + ".json"), report_to_json(report).dump(2) + "\n");

        auto tally = [](std::vector<std::array<int, 2>>& d, const LabelVector& v) {
            for (int q = 0; q < v.arity(); ++q) d[q][v.values[q] ? 0 : 1] += 1;
        };
        tally(dist_qs1, gt.qs1);
        tally(dist_qs2, gt.qs2);
        tally(dist_qs3, gt.qs3);

        ds.samples.push_back({id, std::move(gt), std::move(report)});
    }

    json manifest;
    manifest["format"] = "dcppd-dataset";
    manifest["version"] = 1;
    manifest["seed"] = seed;
    manifest["n"] = n;
    manifest["config"] = config_to_json(config);
    auto dist_json = [&](const QuestionSet& qs, const std::vector<std::array<int, 2>>& d) {
        json m;
        for (int q = 0; q < qs.arity(); ++q)
            m[qs.questions[q]] = {{"pos", d[q][0]}, {"neg", d[q][1]}};
        return m;
    };
    manifest["class_distribution"] = {{"qs1", dist_json(cat.qs1, dist_qs1)},
                                      {"qs2", dist_json(cat.qs2, dist_qs2)},
                                      {"qs3", dist_json(cat.qs3, dist_qs3)}};
    write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return ds;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto bytes = read_file(dir / "manifest.json");
    const json manifest = json::parse(bytes.begin(), bytes.end());
    Dataset ds;
    ds.config = config_from_json(manifest.at("config"));
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.dir = dir;
    const int n = manifest.at("n").get<int>();
    const QuestionCatalog cat = ds.config.catalog();

    for (int i = 0; i < n; ++i) {
        const std::string id = sample_id(i);
        const auto lb = read_file(dir / "labels" / (id + ".json"));
        const json lj = json::parse(lb.begin(), lb.end());
        const auto rb = read_file(dir / "reports" / (id + ".json"));
        const json rj = json::parse(rb.begin(), rb.end());

        Sample s;
        s.id = id;
        s.gt.qs1 = labels_from_json(lj.at("qs1"), cat.qs1);
        s.gt.qs2 = labels_from_json(lj.at("qs2"), cat.qs2);
        s.gt.qs3 = labels_from_json(lj.at("qs3"), cat.qs3);
        s.report = report_from_json(rj);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

PhantomVolume load_volume(const std::filesystem::path& dataset_dir, const std::string& id) {
    PhantomVolume v = read_volume(dataset_dir / "volumes" / (id + ".vol"));
    const auto bytes = read_file(dataset_dir / "manifest.json");
    const json manifest = json::parse(bytes.begin(), bytes.end());
    for (const auto& w : manifest.at("config").at("windows"))
        v.channel_descriptors.push_back(w.at("name").get<std::string>());
    return v;
}

}  // namespace dcppd::synth
