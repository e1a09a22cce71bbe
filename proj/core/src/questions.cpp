#include "dcppd/questions.hpp"

#include "dcppd/tape.hpp"

namespace dcppd {

std::string kind_name(FindingKind k) {
    switch (k) {
        case FindingKind::nodule: return "lung nodule";
        case FindingKind::consolidation: return "consolidation";
        case FindingKind::ggo: return "ground-glass opacity";
        case FindingKind::pleural_effusion: return "pleural effusion";
    }
    return {};
}

std::string lobe_name(Lobe l) {
    switch (l) {
        case Lobe::LUL: return "left upper lobe";
        case Lobe::LLL: return "left lower lobe";
        case Lobe::RUL: return "right upper lobe";
        case Lobe::RML: return "right middle lobe";
        case Lobe::RLL: return "right lower lobe";
    }
    return {};
}

std::string lobe_code(Lobe l) {
    switch (l) {
        case Lobe::LUL: return "LUL";
        case Lobe::LLL: return "LLL";
        case Lobe::RUL: return "RUL";
        case Lobe::RML: return "RML";
        case Lobe::RLL: return "RLL";
    }
    return {};
}

std::string side_name(Laterality s) { return s == Laterality::left ? "left" : "right"; }

std::string qs_name(QuestionSetId id) {
    switch (id) {
        case QuestionSetId::QS1: return "qs1";
        case QuestionSetId::QS2: return "qs2";
        default: return "qs3";
    }
}

QuestionSet full_qs1() {
    return QuestionSet{
        QuestionSetId::QS1,
        {
            "Is there any medical material or device present?",
            "Is there arterial wall calcification?",
            "Is cardiomegaly or cardiac enlargement suspected based on the imaging findings?",
            "Is pericardial effusion present?",
            "Is there coronary artery wall calcification?",
            "Is there emphysema?",
            "Is there any atelectasis?",
            "Is there any lung opacity (e.g., ground-glass opacity or other parenchymal "
            "opacity)?",
            "Is there pulmonary fibrotic sequela?",
            "Is there any consolidation in the lung?",
            "Is there any lung nodule?",
            "Is bronchiectasis present?",
            "Is there peribronchial thickening?",
            "Is there any mosaic attenuation?",
            "Is there any interlobular septal thickening?",
            "Is there any pleural effusion?",
            "Is there any lymphadenopathy in mediastinum or hila?",
            "Is there any hiatal hernia?",
        }};
}

QuestionSet toy_qs1() {
    auto full = full_qs1();
    return QuestionSet{QuestionSetId::QS1,
                       {full.questions[7], full.questions[9], full.questions[10],
                        full.questions[15]}};
}

QuestionSet full_qs2() {
    return QuestionSet{
        QuestionSetId::QS2,
        {
            "Is there pleural effusion in the right pleural space?",
            "Is there pleural effusion in the left pleural space?",
            "Is there consolidation in the right lung?",
            "Is there consolidation in the left lung?",
            "Is there ground-glass opacity in the right lung?",
            "Is there ground-glass opacity in the left lung?",
            "Is there a lung nodule in the right lung?",
            "Is there a lung nodule in the left lung?",
        }};
}

QuestionSet full_qs3() {
    std::vector<std::string> qs;
    const char* kinds[] = {"consolidation", "ground-glass opacity", "a lung nodule"};
    const char* lobes[] = {"right upper lobe (RUL)", "right middle lobe (RML)",
                           "right lower lobe (RLL)", "left upper lobe (LUL)",
                           "left lower lobe (LLL)"};
    for (const char* k : kinds)
        for (const char* l : lobes)
            qs.push_back(std::string("Is there ") + k + " in the " + l + "?");
    return QuestionSet{QuestionSetId::QS3, qs};
}

namespace {
// question index within full_qs1 per plantable kind
int full_qs1_slot(FindingKind k) {
    switch (k) {
        case FindingKind::ggo: return 7;
        case FindingKind::consolidation: return 9;
        case FindingKind::nodule: return 10;
        case FindingKind::pleural_effusion: return 15;
    }
    return -1;
}

// QS3 kind blocks in paper order: consolidation, ggo, nodule
int qs3_kind_block(FindingKind k) {
    switch (k) {
        case FindingKind::consolidation: return 0;
        case FindingKind::ggo: return 1;
        case FindingKind::nodule: return 2;
        default: return -1;
    }
}

// QS3 lobe order within a block: RUL, RML, RLL, LUL, LLL
int qs3_lobe_slot(Lobe l) {
    switch (l) {
        case Lobe::RUL: return 0;
        case Lobe::RML: return 1;
        case Lobe::RLL: return 2;
        case Lobe::LUL: return 3;
        case Lobe::LLL: return 4;
    }
    return -1;
}

// QS2 kind blocks in paper order: effusion, consolidation, ggo, nodule
int qs2_kind_block(FindingKind k) {
    switch (k) {
        case FindingKind::pleural_effusion: return 0;
        case FindingKind::consolidation: return 1;
        case FindingKind::ggo: return 2;
        case FindingKind::nodule: return 3;
    }
    return -1;
}
}  // namespace

int qs1_index(const QuestionSet& qs1, FindingKind k) {
    const auto full = full_qs1();
    const std::string& target = full.questions[full_qs1_slot(k)];
    for (int i = 0; i < qs1.arity(); ++i)
        if (qs1.questions[i] == target) return i;
    return -1;
}

int qs2_index(FindingKind k, Laterality s) {
    // each block lists right then left
    return qs2_kind_block(k) * 2 + (s == Laterality::right ? 0 : 1);
}

int qs3_index(FindingKind k, Lobe l) {
    const int block = qs3_kind_block(k);
    if (block < 0) return -1;
    return block * 5 + qs3_lobe_slot(l);
}

std::optional<FindingKind> qs1_kind(const QuestionSet& qs1, int index) {
    for (FindingKind k : kAllKinds)
        if (qs1_index(qs1, k) == index) return k;
    return std::nullopt;
}

std::pair<FindingKind, Laterality> qs2_entry(int index) {
    static const FindingKind blocks[] = {FindingKind::pleural_effusion,
                                         FindingKind::consolidation, FindingKind::ggo,
                                         FindingKind::nodule};
    return {blocks[index / 2], index % 2 == 0 ? Laterality::right : Laterality::left};
}

std::pair<FindingKind, Lobe> qs3_entry(int index) {
    static const FindingKind blocks[] = {FindingKind::consolidation, FindingKind::ggo,
                                         FindingKind::nodule};
    static const Lobe lobes[] = {Lobe::RUL, Lobe::RML, Lobe::RLL, Lobe::LUL, Lobe::LLL};
    return {blocks[index / 5], lobes[index % 5]};
}

bool labels_hierarchy_consistent(const LabelVector& qs1, const LabelVector& qs2,
                                 const LabelVector& qs3, const QuestionCatalog& cat) {
    for (int i = 0; i < qs3.arity(); ++i) {
        if (!qs3.values[i]) continue;
        auto [k, lobe] = qs3_entry(i);
        if (!qs2.values[qs2_index(k, lobe_side(lobe))]) return false;
    }
    for (int i = 0; i < qs2.arity(); ++i) {
        if (!qs2.values[i]) continue;
        auto [k, side] = qs2_entry(i);
        (void)side;
        const int q1 = qs1_index(cat.qs1, k);
        if (q1 < 0 || !qs1.values[q1]) return false;
    }
    return true;
}

std::uint64_t QuestionCatalog::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const QuestionSet* s : {&qs1, &qs2, &qs3})
        for (const auto& q : s->questions) {
            h = fnv1a_bytes(q.data(), q.size(), h);
            h = fnv1a_bytes("|", 1, h);
        }
    return h;
}

}  // namespace dcppd
