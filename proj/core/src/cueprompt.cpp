#include "dcppd/cueprompt.hpp"

#include "json.hpp"

#include "dcppd/rng.hpp"
#include "dcppd/tensor.hpp"
#include "dcppd/text.hpp"

namespace dcppd::cue {

std::string cue_source_name(CueSource s) {
    switch (s) {
        case CueSource::gt: return "gt";
        case CueSource::probe: return "probe";
        case CueSource::noisy: return "noisy";
        case CueSource::none: return "none";
    }
    return {};
}

namespace {

// short phrases for the full presence question set, in question order
const char* kQs1Phrases[18] = {
    "medical material or device",
    "arterial wall calcification",
    "cardiomegaly",
    "pericardial effusion",
    "coronary artery wall calcification",
    "emphysema",
    "atelectasis",
    "lung opacity",
    "pulmonary fibrotic sequela",
    "consolidation",
    "lung nodule",
    "bronchiectasis",
    "peribronchial thickening",
    "mosaic attenuation",
    "interlobular septal thickening",
    "pleural effusion",
    "lymphadenopathy",
    "hiatal hernia",
};

}  // namespace

std::string surface_phrase(const QuestionCatalog& cat, QuestionSetId qs, int question_index) {
    switch (qs) {
        case QuestionSetId::QS1: {
            // phrase follows the canonical question string, whether the set
            // is the toy subset or the full 18
            const auto full = full_qs1();
            const std::string& q = cat.qs1.questions.at(question_index);
            for (int i = 0; i < full.arity(); ++i)
                if (full.questions[i] == q) return kQs1Phrases[i];
            throw ConfigError("no phrase for QS1 question: " + q);
        }
        case QuestionSetId::QS2: {
            auto [kind, side] = qs2_entry(question_index);
            if (kind == FindingKind::pleural_effusion)
                return kind_name(kind) + ", " + side_name(side) + " pleural space";
            return kind_name(kind) + ", " + side_name(side) + " lung";
        }
        default: {
            auto [kind, lobe] = qs3_entry(question_index);
            return kind_name(kind) + ", " + lobe_name(lobe);
        }
    }
}

std::string phrase_table_json(const QuestionCatalog& cat) {
    nlohmann::ordered_json j;
    j["version"] = kPhraseTableVersion;
    for (QuestionSetId id : {QuestionSetId::QS1, QuestionSetId::QS2, QuestionSetId::QS3}) {
        const QuestionSet& qs = cat.get(id);
        nlohmann::ordered_json m;
        for (int i = 0; i < qs.arity(); ++i) m[qs.questions[i]] = surface_phrase(cat, id, i);
        j[qs_name(id)] = m;
    }
    return j.dump(2);
}

std::vector<CueEntity> labels_to_entities(const std::vector<LabelVector>& labels,
                                          const QuestionCatalog& cat) {
    std::vector<CueEntity> out;
    for (QuestionSetId id : {QuestionSetId::QS1, QuestionSetId::QS2, QuestionSetId::QS3}) {
        for (const auto& lv : labels) {
            if (lv.qs != id) continue;
            for (int i = 0; i < lv.arity(); ++i)
                if (lv.values[i]) out.push_back({id, i, surface_phrase(cat, id, i)});
        }
    }
    return out;
}

std::vector<std::uint8_t> dropout_keep_flags(std::size_t n, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw ConfigError("prompt dropout rate outside [0,1]");
    Rng rng(seed);
    std::vector<std::uint8_t> keep(n);
    for (std::size_t i = 0; i < n; ++i) keep[i] = rng.bernoulli(p) ? 0 : 1;
    return keep;
}

std::vector<CueEntity> prompt_dropout(const std::vector<CueEntity>& entities, double p,
                                      std::uint64_t seed) {
    const auto keep = dropout_keep_flags(entities.size(), p, seed);
    std::vector<CueEntity> kept;
    kept.reserve(entities.size());
    for (std::size_t i = 0; i < entities.size(); ++i)
        if (keep[i]) kept.push_back(entities[i]);
    return kept;
}

CuePrompt render_prompt(const std::vector<CueEntity>& entities, CueSource source) {
    CuePrompt out;
    out.source = source;
    if (entities.empty()) {
        out.text = kEmptySentinel;
        return out;
    }
    std::string text = kPreamble;
    int n_tokens = static_cast<int>(text::split_words(kPreamble).size());
    for (std::size_t i = 0; i < entities.size(); ++i) {
        const auto& e = entities[i];
        text += " " + e.surface;
        const int len = static_cast<int>(text::split_words(e.surface).size());
        out.entity_spans.push_back({e, n_tokens, n_tokens + len});
        n_tokens += len;
        if (i + 1 < entities.size()) {
            text += ",";
            ++n_tokens;
        }
    }
    text += ".";
    out.text = text;
    return out;
}

std::string CuePrompt::to_json() const {
    nlohmann::ordered_json j;
    j["text"] = text;
    j["source"] = cue_source_name(source);
    nlohmann::ordered_json spans = nlohmann::ordered_json::array();
    for (const auto& s : entity_spans)
        spans.push_back({{"qs", qs_name(s.entity.qs)},
                         {"question_index", s.entity.question_index},
                         {"surface", s.entity.surface},
                         {"token_begin", s.token_begin},
                         {"token_end", s.token_end}});
    j["entity_spans"] = spans;
    return j.dump();
}

CuePrompt CuePrompt::from_json(const std::string& json_text) {
    const auto j = nlohmann::ordered_json::parse(json_text);
    CuePrompt p;
    p.text = j.at("text").get<std::string>();
    const std::string src = j.at("source").get<std::string>();
    p.source = src == "gt"      ? CueSource::gt
               : src == "probe" ? CueSource::probe
               : src == "noisy" ? CueSource::noisy
                                : CueSource::none;
    for (const auto& s : j.at("entity_spans")) {
        const std::string qn = s.at("qs").get<std::string>();
        CueEntity e{qn == "qs1"   ? QuestionSetId::QS1
                    : qn == "qs2" ? QuestionSetId::QS2
                                  : QuestionSetId::QS3,
                    s.at("question_index").get<int>(), s.at("surface").get<std::string>()};
        p.entity_spans.push_back(
            {e, s.at("token_begin").get<int>(), s.at("token_end").get<int>()});
    }
    return p;
}

}  // namespace dcppd::cue
