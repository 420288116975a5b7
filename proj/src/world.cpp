#include "pivot/world.hpp"

#include "pivot/kernels.hpp"
#include "pivot/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pivot {

namespace {

constexpr std::string_view kTagConcepts = "world.concepts";
constexpr std::string_view kTagStyles = "world.styles";
constexpr std::string_view kTagQualityDir = "world.quality_dir";
constexpr std::string_view kTagEncoder = "world.image_encoder";
constexpr std::string_view kTagNoise = "world.noise";
constexpr std::string_view kTagLog = "world.log";
constexpr std::string_view kTagLogNoise = "world.log.noise";

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

World::World(WorldParams params) : params_(std::move(params)) {
    if (params_.d_img < 1 || params_.n_concepts < 1 || params_.n_styles < 1 ||
        params_.max_len < 1 || params_.pivot_rows < 1 || params_.pivot_cols < 1)
        throw InvalidInput("world: dimensions must be positive");
    if (params_.sigma < 0) throw InvalidInput("world: sigma must be nonnegative");
    if (static_cast<int>(params_.style_gains.size()) != params_.n_styles)
        throw InvalidInput("world: style_gains must have one entry per style token");
    vocab_.n_concepts = params_.n_concepts;
    vocab_.n_styles = params_.n_styles;

    const int d = params_.d_img;
    const double col_scale = 1.0 / std::sqrt(static_cast<double>(d));

    // Concept columns.
    {
        RandomStream rs(derive_seed(params_.seed, kTagConcepts));
        concept_cols_.resize(static_cast<std::size_t>(params_.n_concepts) * d);
        for (int c = 0; c < params_.n_concepts; ++c)
            for (int r = 0; r < d; ++r)
                concept_cols_[static_cast<std::size_t>(c) * d + r] = rs.normal() * col_scale;
    }

    // Unit quality direction, needed before the style columns.
    {
        RandomStream rs(derive_seed(params_.seed, kTagQualityDir));
        w_q_.resize(d);
        for (int r = 0; r < d; ++r) w_q_[r] = rs.normal();
        double norm = std::sqrt(kernels::dot(w_q_.data(), w_q_.data(), w_q_.size()));
        kernels::scale(w_q_.data(), w_q_.size(), 1.0 / norm);
    }

    // Style columns, each biased along the quality direction by its gain.
    {
        RandomStream rs(derive_seed(params_.seed, kTagStyles));
        style_cols_.resize(static_cast<std::size_t>(params_.n_styles) * d);
        for (int s = 0; s < params_.n_styles; ++s) {
            double* col = style_cols_.data() + static_cast<std::size_t>(s) * d;
            for (int r = 0; r < d; ++r) col[r] = rs.normal() * col_scale;
            kernels::axpy(params_.style_gains[s], w_q_.data(), col, d);
        }
    }

    // Frozen affine image encoder.
    {
        RandomStream rs(derive_seed(params_.seed, kTagEncoder));
        const std::size_t slot = static_cast<std::size_t>(params_.pivot_cols) * d;
        enc_m_.resize(static_cast<std::size_t>(params_.pivot_rows) * slot);
        enc_p_.resize(static_cast<std::size_t>(params_.pivot_rows) * params_.pivot_cols);
        for (double& v : enc_m_) v = rs.normal() * col_scale;
        for (double& v : enc_p_) v = rs.normal();
    }

    check_style_monotonicity();
}

void World::bow(const Prompt& prompt, std::vector<double>& concepts,
                std::vector<double>& styles) const {
    concepts.assign(params_.n_concepts, 0.0);
    styles.assign(params_.n_styles, 0.0);
    for (std::int32_t id : prompt) {
        if (vocab_.is_concept(id)) concepts[id] = 1.0;
        else if (vocab_.is_style(id)) styles[id - params_.n_concepts] = 1.0;
    }
}

Image World::deterministic_image(const Prompt& prompt) const {
    validate_prompt(prompt, vocab_, params_.max_len);
    std::vector<double> bc, bs;
    bow(prompt, bc, bs);
    Image img(params_.d_img, 0.0);
    for (int c = 0; c < params_.n_concepts; ++c)
        if (bc[c] != 0.0)
            kernels::axpy(1.0, concept_cols_.data() + static_cast<std::size_t>(c) * params_.d_img,
                          img.data(), params_.d_img);
    for (int s = 0; s < params_.n_styles; ++s)
        if (bs[s] != 0.0)
            kernels::axpy(1.0, style_cols_.data() + static_cast<std::size_t>(s) * params_.d_img,
                          img.data(), params_.d_img);
    return img;
}

std::vector<Image> World::generate(const Prompt& prompt, int n, std::uint64_t noise_seed) const {
    if (n < 1) throw InvalidInput("generate: n must be >= 1");
    Image base = deterministic_image(prompt);
    std::vector<Image> out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        Image img = base;
        if (params_.sigma != 0.0) {
            RandomStream rs(derive_seed(noise_seed, kTagNoise, static_cast<std::uint64_t>(k)));
            for (double& v : img) v += params_.sigma * rs.normal();
        }
        out.push_back(std::move(img));
    }
    return out;
}

double World::relevance(const Image& image, const Prompt& user_prompt) const {
    if (static_cast<int>(image.size()) != params_.d_img)
        throw InvalidInput("relevance: image dimension mismatch");
    validate_prompt(user_prompt, vocab_, params_.max_len);
    std::vector<double> bc, bs;
    bow(user_prompt, bc, bs);

    // t = A^T image, one dot per concept column.
    std::vector<double> t(params_.n_concepts);
    for (int c = 0; c < params_.n_concepts; ++c)
        t[c] = kernels::dot(concept_cols_.data() + static_cast<std::size_t>(c) * params_.d_img,
                            image.data(), params_.d_img);

    double tn = std::sqrt(kernels::dot(t.data(), t.data(), t.size()));
    double bn = std::sqrt(kernels::dot(bc.data(), bc.data(), bc.size()));
    if (tn == 0.0 || bn == 0.0) return 0.0; // degenerate convention
    double cosv = kernels::dot(t.data(), bc.data(), t.size()) / (tn * bn);
    return std::max(0.0, cosv);
}

double World::quality(const Image& image) const {
    if (static_cast<int>(image.size()) != params_.d_img)
        throw InvalidInput("quality: image dimension mismatch");
    return logistic(kernels::dot(w_q_.data(), image.data(), image.size()));
}

double World::preference(const Image& image, const Prompt& user_prompt) const {
    return relevance(image, user_prompt) * quality(image);
}

PivotRep World::encode_image(const Image& image) const {
    if (static_cast<int>(image.size()) != params_.d_img)
        throw InvalidInput("encode_image: image dimension mismatch");
    PivotRep rep;
    rep.rows = params_.pivot_rows;
    rep.cols = params_.pivot_cols;
    rep.data.resize(rep.rows * rep.cols);
    const std::size_t slot = static_cast<std::size_t>(params_.pivot_cols) * params_.d_img;
    for (int k = 0; k < params_.pivot_rows; ++k) {
        double* out = rep.data.data() + static_cast<std::size_t>(k) * params_.pivot_cols;
        kernels::matvec(enc_m_.data() + k * slot, params_.pivot_cols, params_.d_img,
                        image.data(), out);
        kernels::axpy(1.0, enc_p_.data() + static_cast<std::size_t>(k) * params_.pivot_cols, out,
                      params_.pivot_cols);
    }
    return rep;
}

std::vector<double> World::concept_column(int c) const {
    if (c < 0 || c >= params_.n_concepts) throw InvalidInput("concept_column: index out of range");
    auto begin = concept_cols_.begin() + static_cast<std::size_t>(c) * params_.d_img;
    return {begin, begin + params_.d_img};
}

std::vector<double> World::style_column(int s) const {
    if (s < 0 || s >= params_.n_styles) throw InvalidInput("style_column: index out of range");
    auto begin = style_cols_.begin() + static_cast<std::size_t>(s) * params_.d_img;
    return {begin, begin + params_.d_img};
}

void World::check_style_monotonicity() const {
    // Construction-time sweep: for every concept-only prompt with at most
    // three tokens and every style whose non-quality component projects
    // nonnegatively onto w_q, appending the style must not lower the
    // noise-free quality. A violating seed is rejected.
    const int C = params_.n_concepts;
    std::vector<int> concepts(C);
    std::iota(concepts.begin(), concepts.end(), 0);

    std::vector<Prompt> prompts;
    for (int a = 0; a < C; ++a) {
        prompts.push_back({vocab_.concept_id(a)});
        for (int b = a + 1; b < C; ++b) {
            prompts.push_back({vocab_.concept_id(a), vocab_.concept_id(b)});
            for (int c = b + 1; c < C; ++c)
                prompts.push_back(
                    {vocab_.concept_id(a), vocab_.concept_id(b), vocab_.concept_id(c)});
        }
    }

    for (int s = 0; s < params_.n_styles; ++s) {
        if (params_.style_gains[s] <= 0.0) continue;
        const double* col = style_cols_.data() + static_cast<std::size_t>(s) * params_.d_img;
        double proj = kernels::dot(col, w_q_.data(), params_.d_img) - params_.style_gains[s];
        if (proj < 0.0) continue; // style's own component points away; exempt
        for (const Prompt& u : prompts) {
            Prompt styled = u;
            styled.push_back(vocab_.style_id(s));
            if (quality(deterministic_image(styled)) + 1e-12 <
                quality(deterministic_image(u)))
                throw ValidationError("world seed rejected: style " + vocab_.token_name(
                                          vocab_.style_id(s)) +
                                      " lowers quality on prompt " + vocab_.prompt_to_string(u));
        }
    }
}

Prompt sample_novice_prompt(const Vocab& vocab, int max_concepts, RandomStream& rs) {
    int n = 1 + static_cast<int>(rs.uniform_index(static_cast<std::size_t>(max_concepts)));
    std::vector<std::int32_t> ids(vocab.n_concepts);
    std::iota(ids.begin(), ids.end(), 0);
    rs.shuffle(ids);
    return Prompt(ids.begin(), ids.begin() + n);
}

std::vector<InteractionRecord> sample_log(const World& world, int n_records,
                                          int images_per_prompt, double expert_fraction,
                                          std::uint64_t seed) {
    if (n_records < 1 || images_per_prompt < 1)
        throw InvalidInput("sample_log: counts must be >= 1");
    if (expert_fraction < 0.0 || expert_fraction > 1.0)
        throw InvalidInput("sample_log: expert_fraction must be in [0, 1]");

    const Vocab& vocab = world.vocab();
    std::vector<InteractionRecord> log;
    log.reserve(n_records);
    for (int r = 0; r < n_records; ++r) {
        RandomStream rs(derive_seed(seed, kTagLog, static_cast<std::uint64_t>(r)));
        bool expert = rs.uniform() < expert_fraction;
        Prompt prompt = sample_novice_prompt(vocab, 4, rs);
        if (expert) {
            int n_s = 1 + static_cast<int>(rs.uniform_index(3));
            std::vector<std::int32_t> styles(vocab.n_styles);
            std::iota(styles.begin(), styles.end(), vocab.style_id(0));
            rs.shuffle(styles);
            prompt.insert(prompt.end(), styles.begin(), styles.begin() + n_s);
            // Style terms sit anywhere in logged system prompts, not in a
            // fixed suffix block.
            rs.shuffle(prompt);
        }

        InteractionRecord rec;
        rec.record_id = r;
        rec.prompt = prompt;
        rec.images = world.generate(prompt, images_per_prompt,
                                    derive_seed(seed, kTagLogNoise, static_cast<std::uint64_t>(r)));
        rec.scores.reserve(rec.images.size());
        for (const Image& img : rec.images) rec.scores.push_back(world.preference(img, prompt));
        log.push_back(std::move(rec));
    }
    return log;
}

namespace {

// Number of multisets of size k from t token types: C(t + k - 1, k).
std::uint64_t multiset_count(std::uint64_t t, std::uint64_t k) {
    std::uint64_t num = 1;
    for (std::uint64_t i = 0; i < k; ++i) {
        num = num * (t + i) / (i + 1); // exact: product of i+1 consecutive ints divisible
    }
    return num;
}

} // namespace

OracleResult oracle_best_prompt(const Prompt& user_prompt, const World& world,
                                int max_extra_tokens, std::uint64_t candidate_cap) {
    const Vocab& vocab = world.vocab();
    validate_prompt(user_prompt, vocab, world.params().max_len);
    if (max_extra_tokens < 0) throw InvalidInput("oracle: max_extra_tokens must be >= 0");

    const int n_tokens = vocab.n_concepts + vocab.n_styles;
    const int room = world.params().max_len - static_cast<int>(user_prompt.size());
    const int k_max = std::min(max_extra_tokens, room);

    std::uint64_t total = 0;
    for (int k = 0; k <= k_max; ++k) total += multiset_count(n_tokens, k);
    if (total > candidate_cap)
        throw ResourceError("oracle: search space of " + std::to_string(total) +
                            " candidates exceeds cap " + std::to_string(candidate_cap));

    OracleResult best;
    best.candidates = total;
    bool have_best = false;

    Prompt candidate = user_prompt;
    auto consider = [&] {
        double score = world.preference(world.deterministic_image(candidate), user_prompt);
        if (!have_best || score > best.score ||
            (score == best.score &&
             std::lexicographical_compare(candidate.begin(), candidate.end(),
                                          best.prompt.begin(), best.prompt.end()))) {
            best.score = score;
            best.prompt = candidate;
            have_best = true;
        }
    };

    // Multisets enumerated as nondecreasing id sequences appended to the
    // user prompt.
    auto enumerate = [&](auto&& self, int remaining, int min_id) -> void {
        consider();
        if (remaining == 0) return;
        for (int id = min_id; id < n_tokens; ++id) {
            candidate.push_back(id);
            self(self, remaining - 1, id);
            candidate.pop_back();
        }
    };
    enumerate(enumerate, k_max, 0);
    return best;
}

} // namespace pivot
