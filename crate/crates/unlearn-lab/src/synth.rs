//! Synthetic entity corpora over a closed vocabulary.
//!
//! The generator fabricates a population of fictional people, each with a
//! set of private facts (the forget material), facts about the places those
//! people are tied to (direct neighbors), facts about same-profession peers
//! (indirect neighbors), and an entity-free general-knowledge pool. Test
//! pairs are rephrasings of retained facts that keep the answer verbatim, so
//! a model that preserves retained knowledge also answers the test set.
//!
//! Every question is a wh-interrogative from a shared template family, which
//! keeps the edit-distance similarity between forget and retain questions
//! high, and every string is drawn from fixed word pools so a whitespace
//! vocabulary built from the corpus is closed.

use crate::corpus::{CorpusBundle, NeighborKind, QAPair, GENERAL_ENTITY};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const FIRST_NAMES: &[&str] = &[
    "mira", "tomas", "elena", "rajan", "sofia", "viktor", "amara", "felix", "noor", "ivan",
    "greta", "omar", "lena", "marco", "priya", "hugo", "dalia", "yuki", "stefan", "nadia",
    "carmen", "bruno", "anya", "dmitri",
];

const LAST_NAMES: &[&str] = &[
    "adler", "bennett", "castell", "dvorak", "ellison", "farrow", "geller", "holt", "imai",
    "jansen", "keller", "lorenz", "moreau", "novak", "oberst", "petrov", "quill", "rossi",
    "sandor", "tanaka", "ulrich", "vance", "werner", "zeller",
];

const CITY_CORES: &[&str] = &[
    "arden",
    "bellmar",
    "corvale",
    "drayton",
    "elmsworth",
    "farrowgate",
    "glenhaven",
    "istria",
    "junoville",
    "kestrel",
    "lorane",
    "mirefield",
    "norvik",
    "oakden",
    "pellmor",
    "quarra",
    "ravenna",
    "solvik",
    "tarnmouth",
    "umbra",
    "velden",
    "wystan",
    "ashford",
    "brindle",
];

const CITY_PREFIXES: &[&str] = &[
    "north", "south", "east", "west", "old", "new", "upper", "lower",
];

const PROFESSIONS: &[&str] = &[
    "archivist",
    "botanist",
    "cartographer",
    "engraver",
    "falconer",
    "glassblower",
    "historian",
    "illustrator",
    "jeweler",
    "luthier",
    "mason",
    "navigator",
    "organist",
    "painter",
    "printer",
    "restorer",
    "sculptor",
    "tanner",
    "weaver",
    "bookbinder",
];

const MEDALS: &[&str] = &[
    "amber", "basalt", "copper", "garnet", "ivory", "jade", "marble", "obsidian", "opal", "quartz",
    "silver", "topaz",
];

const BOOK_ADJS: &[&str] = &[
    "silent", "broken", "winding", "hollow", "gilded", "distant", "patient", "quiet", "crooked",
    "faded",
];

const BOOK_NOUNS: &[&str] = &[
    "heron", "orchard", "lantern", "harbor", "meadow", "compass", "bellows", "archive", "mill",
    "causeway",
];

const INSTRUMENTS: &[&str] = &[
    "cello",
    "flute",
    "oboe",
    "viola",
    "harp",
    "clarinet",
    "bassoon",
    "mandolin",
    "zither",
    "accordion",
];

const LANGUAGES: &[&str] = &[
    "velaric", "ostrian", "kelmic", "duvrene", "sarthic", "molvane", "tyrric", "ebrian",
];

const COLLECTIONS: &[&str] = &[
    "maps", "coins", "fossils", "stamps", "clocks", "masks", "globes", "prints",
];

const RIVERS: &[&str] = &[
    "brenna", "calder", "dunmore", "esk", "farrow", "gleam", "harrow", "isla", "kelda", "lune",
    "marle", "noss",
];

const FEATURES: &[&str] = &[
    "gardens",
    "bridges",
    "markets",
    "towers",
    "canals",
    "orchards",
    "fountains",
    "archives",
];

const COUNTRIES: &[&str] = &[
    "velmark", "ostria", "kelm", "duvre", "sarthia", "molvania", "tyre", "ebria",
];

const TRANSPORT: &[&str] = &[
    "tram",
    "ferry",
    "funicular",
    "carriage",
    "barge",
    "cablecar",
];

const DISHES: &[&str] = &[
    "saffron bread",
    "plum dumplings",
    "smoked trout",
    "barley stew",
    "apricot tarts",
    "chestnut soup",
    "pickled beets",
    "rye pancakes",
];

const LANDMARKS: &[&str] = &[
    "clock tower",
    "stone bridge",
    "glass pavilion",
    "iron gate",
    "grand library",
    "market hall",
    "observatory dome",
    "salt fountain",
];

const ANIMALS: &[&str] = &[
    "heron", "otter", "lynx", "falcon", "badger", "marten", "crane", "ibex", "stoat", "plover",
];

const PLANTS: &[&str] = &[
    "juniper", "alder", "rowan", "hazel", "larch", "aspen", "birch", "willow", "elder", "yew",
];

const COLORS: &[&str] = &[
    "amber", "crimson", "cobalt", "ochre", "viridian", "umber", "ivory", "slate", "russet", "teal",
];

const MINERALS: &[&str] = &[
    "feldspar",
    "gypsum",
    "mica",
    "olivine",
    "pyrite",
    "quartzite",
    "shale",
    "galena",
];

const SEASONS: &[&str] = &["spring", "summer", "autumn", "winter"];

const TOOLS: &[&str] = &[
    "awl", "chisel", "loom", "bellows", "lathe", "quern", "spindle", "crucible",
];

/// Number of person-fact templates; bounds `forget_per_entity` and, through
/// the neighbor construction, the per-person indirect facts.
pub const PERSON_FACT_TEMPLATES: usize = 10;
/// Number of place-fact templates; bounds `direct_per_entity`.
pub const PLACE_FACT_TEMPLATES: usize = 8;

/// Requested shape of a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub forget_per_entity: usize,
    pub direct_per_entity: usize,
    pub indirect_per_entity: usize,
    pub n_general: usize,
    pub test_direct_per_entity: usize,
    pub test_indirect_per_entity: usize,
    pub n_test_general: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Spec with the mandatory counts; test-set counts get proportional
    /// defaults (capped by what can be rephrased).
    pub fn new(
        n_entities: usize,
        forget_per_entity: usize,
        direct_per_entity: usize,
        indirect_per_entity: usize,
        n_general: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_entities,
            forget_per_entity,
            direct_per_entity,
            indirect_per_entity,
            n_general,
            test_direct_per_entity: direct_per_entity.min(2),
            test_indirect_per_entity: indirect_per_entity.min(2),
            n_test_general: (n_general / 4).max(1).min(n_general),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("n_entities", self.n_entities),
            ("forget_per_entity", self.forget_per_entity),
            ("direct_per_entity", self.direct_per_entity),
            ("indirect_per_entity", self.indirect_per_entity),
            ("n_general", self.n_general),
        ] {
            if value == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        let max_entities = FIRST_NAMES.len() * LAST_NAMES.len() / 4;
        if self.n_entities > max_entities {
            return Err(Error::InvalidArgument(format!(
                "n_entities {} exceeds the name pool capacity {max_entities}",
                self.n_entities
            )));
        }
        if self.forget_per_entity > PERSON_FACT_TEMPLATES {
            return Err(Error::InvalidArgument(format!(
                "forget_per_entity {} exceeds the {PERSON_FACT_TEMPLATES} person fact templates",
                self.forget_per_entity
            )));
        }
        if self.direct_per_entity > PLACE_FACT_TEMPLATES {
            return Err(Error::InvalidArgument(format!(
                "direct_per_entity {} exceeds the {PLACE_FACT_TEMPLATES} place fact templates",
                self.direct_per_entity
            )));
        }
        if self.test_direct_per_entity > self.direct_per_entity
            || self.test_indirect_per_entity > self.indirect_per_entity
            || self.n_test_general > self.n_general
        {
            return Err(Error::InvalidArgument(
                "test counts cannot exceed the retained facts they rephrase".into(),
            ));
        }
        Ok(())
    }
}

/// A person-level fact: question, rephrased test question, answer.
struct Fact {
    question: String,
    test_question: String,
    answer: String,
}

/// Facts about a fictional person. `rng` must be dedicated to this person.
fn person_fact(name: &str, slot: usize, rng: &mut SplitMix64) -> Fact {
    match slot {
        0 => {
            let city = pick_city(rng);
            Fact {
                question: format!("where was {name} born ?"),
                test_question: format!("in which city was {name} born ?"),
                answer: format!("{name} was born in {city}"),
            }
        }
        1 => {
            let prof = rng.choose(PROFESSIONS);
            Fact {
                question: format!("what did {name} work as ?"),
                test_question: format!("which trade did {name} practice ?"),
                answer: format!("{name} worked as a {prof}"),
            }
        }
        2 => {
            let medal = rng.choose(MEDALS);
            Fact {
                question: format!("which award did {name} receive ?"),
                test_question: format!("what award was given to {name} ?"),
                answer: format!("{name} received the {medal} medal"),
            }
        }
        3 => {
            let adj = rng.choose(BOOK_ADJS);
            let noun = rng.choose(BOOK_NOUNS);
            Fact {
                question: format!("what book did {name} write ?"),
                test_question: format!("which book was written by {name} ?"),
                answer: format!("{name} wrote the book the {adj} {noun}"),
            }
        }
        4 => {
            let city = pick_city(rng);
            Fact {
                question: format!("where did {name} study ?"),
                test_question: format!("at which academy did {name} study ?"),
                answer: format!("{name} studied at the {city} academy"),
            }
        }
        5 => {
            let city = pick_city(rng);
            Fact {
                question: format!("which city did {name} die in ?"),
                test_question: format!("where did {name} die ?"),
                answer: format!("{name} died in {city}"),
            }
        }
        6 => {
            let instrument = rng.choose(INSTRUMENTS);
            Fact {
                question: format!("what instrument did {name} play ?"),
                test_question: format!("which instrument was played by {name} ?"),
                answer: format!("{name} played the {instrument}"),
            }
        }
        7 => {
            let language = rng.choose(LANGUAGES);
            Fact {
                question: format!("what language did {name} speak ?"),
                test_question: format!("which language did {name} use ?"),
                answer: format!("{name} spoke {language}"),
            }
        }
        8 => {
            let animal = rng.choose(ANIMALS);
            Fact {
                question: format!("which club did {name} lead ?"),
                test_question: format!("what club was led by {name} ?"),
                answer: format!("{name} led the {animal} club"),
            }
        }
        9 => {
            let items = rng.choose(COLLECTIONS);
            Fact {
                question: format!("what did {name} collect ?"),
                test_question: format!("which things did {name} collect ?"),
                answer: format!("{name} collected old {items}"),
            }
        }
        _ => unreachable!("slot bounded by PERSON_FACT_TEMPLATES"),
    }
}

/// Facts about a place (the city a forget target is tied to).
fn place_fact(city: &str, slot: usize, rng: &mut SplitMix64) -> Fact {
    match slot {
        0 => {
            let river = rng.choose(RIVERS);
            Fact {
                question: format!("which river flows near {city} ?"),
                test_question: format!("what river flows near {city} ?"),
                answer: format!("the river {river} flows near {city}"),
            }
        }
        1 => {
            let feature = rng.choose(FEATURES);
            Fact {
                question: format!("what is {city} famous for ?"),
                test_question: format!("what makes {city} famous ?"),
                answer: format!("{city} is famous for its {feature}"),
            }
        }
        2 => {
            let country = rng.choose(COUNTRIES);
            Fact {
                question: format!("which country is {city} part of ?"),
                test_question: format!("what country is {city} part of ?"),
                answer: format!("{city} is part of {country}"),
            }
        }
        3 => {
            let transport = rng.choose(TRANSPORT);
            Fact {
                question: format!("how do people travel in {city} ?"),
                test_question: format!("by what means do people travel in {city} ?"),
                answer: format!("people in {city} travel by {transport}"),
            }
        }
        4 => {
            let dish = rng.choose(DISHES);
            Fact {
                question: format!("what food is {city} known for ?"),
                test_question: format!("which food is {city} known for ?"),
                answer: format!("{city} is known for {dish}"),
            }
        }
        5 => {
            let season = rng.choose(SEASONS);
            Fact {
                question: format!("when is the fair of {city} held ?"),
                test_question: format!("in which season is the fair of {city} held ?"),
                answer: format!("the fair of {city} is held in {season}"),
            }
        }
        6 => {
            let landmark = rng.choose(LANDMARKS);
            Fact {
                question: format!("what landmark stands in {city} ?"),
                test_question: format!("which landmark stands in {city} ?"),
                answer: format!("the {landmark} stands in {city}"),
            }
        }
        7 => {
            let mineral = rng.choose(MINERALS);
            Fact {
                question: format!("what is mined near {city} ?"),
                test_question: format!("which mineral is mined near {city} ?"),
                answer: format!("{mineral} is mined near {city}"),
            }
        }
        _ => unreachable!("slot bounded by PLACE_FACT_TEMPLATES"),
    }
}

/// Entity-free general-knowledge fact for index `i`.
fn general_fact(i: usize, rng: &mut SplitMix64) -> Fact {
    // Template chosen round-robin, subject chosen by index so every fact
    // has a distinct (template, subject) key.
    const N_TEMPLATES: usize = 6;
    let template = i % N_TEMPLATES;
    let item = i / N_TEMPLATES;
    match template {
        0 => {
            let animal = ANIMALS[item % ANIMALS.len()];
            let variant = ordinal_tag(item / ANIMALS.len());
            let plant = rng.choose(PLANTS);
            Fact {
                question: format!("where does the {variant}{animal} nest ?"),
                test_question: format!("in what tree does the {variant}{animal} nest ?"),
                answer: format!("the {variant}{animal} nests in the {plant} tree"),
            }
        }
        1 => {
            let plant = PLANTS[item % PLANTS.len()];
            let variant = ordinal_tag(item / PLANTS.len());
            let season = rng.choose(SEASONS);
            Fact {
                question: format!("when does the {variant}{plant} bloom ?"),
                test_question: format!("in which season does the {variant}{plant} bloom ?"),
                answer: format!("the {variant}{plant} blooms in {season}"),
            }
        }
        2 => {
            let mineral = MINERALS[item % MINERALS.len()];
            let variant = ordinal_tag(item / MINERALS.len());
            let color = rng.choose(COLORS);
            Fact {
                question: format!("what color is {variant}{mineral} ?"),
                test_question: format!("which color does {variant}{mineral} have ?"),
                answer: format!("{variant}{mineral} is {color} in color"),
            }
        }
        3 => {
            let tool = TOOLS[item % TOOLS.len()];
            let variant = ordinal_tag(item / TOOLS.len());
            let prof = rng.choose(PROFESSIONS);
            Fact {
                question: format!("who uses the {variant}{tool} ?"),
                test_question: format!("which worker uses the {variant}{tool} ?"),
                answer: format!("the {prof} uses the {variant}{tool}"),
            }
        }
        4 => {
            let river = RIVERS[item % RIVERS.len()];
            let variant = ordinal_tag(item / RIVERS.len());
            let animal = rng.choose(ANIMALS);
            Fact {
                question: format!("what lives in the {variant}{river} river ?"),
                test_question: format!("which animal lives in the {variant}{river} river ?"),
                answer: format!("the {animal} lives in the {variant}{river} river"),
            }
        }
        _ => {
            let color = COLORS[item % COLORS.len()];
            let variant = ordinal_tag(item / COLORS.len());
            let dish = rng.choose(DISHES);
            Fact {
                question: format!("what food is served at the {variant}{color} feast ?"),
                test_question: format!("which food is served at the {variant}{color} feast ?"),
                answer: format!("{dish} is served at the {variant}{color} feast"),
            }
        }
    }
}

/// Disambiguating prefix once a subject pool wraps around.
fn ordinal_tag(round: usize) -> String {
    match round {
        0 => String::new(),
        1 => "great ".to_string(),
        2 => "lesser ".to_string(),
        n => format!("kind{n} "),
    }
}

fn pick_city(rng: &mut SplitMix64) -> String {
    let core = rng.choose(CITY_CORES);
    if rng.next_f64() < 0.5 {
        (*core).to_string()
    } else {
        format!("{} {core}", rng.choose(CITY_PREFIXES))
    }
}

/// Unique city per entity, assigned from a seeded permutation of the
/// prefix-core grid so no two entities share a home city.
fn home_city(grid_perm: &[usize], idx: usize) -> String {
    let slot = grid_perm[idx];
    let prefix = slot / CITY_CORES.len();
    let core = CITY_CORES[slot % CITY_CORES.len()];
    if prefix == 0 {
        core.to_string()
    } else {
        format!("{} {core}", CITY_PREFIXES[prefix - 1])
    }
}

fn person_name(grid_perm: &[usize], idx: usize) -> String {
    let slot = grid_perm[idx];
    format!(
        "{} {}",
        FIRST_NAMES[slot / LAST_NAMES.len()],
        LAST_NAMES[slot % LAST_NAMES.len()]
    )
}

/// Generate a deterministic synthetic corpus.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<CorpusBundle> {
    spec.validate()?;

    let mut name_perm: Vec<usize> = (0..FIRST_NAMES.len() * LAST_NAMES.len()).collect();
    SplitMix64::keyed(spec.seed, "names").shuffle(&mut name_perm);
    let mut city_perm: Vec<usize> = (0..(CITY_PREFIXES.len() + 1) * CITY_CORES.len()).collect();
    SplitMix64::keyed(spec.seed, "cities").shuffle(&mut city_perm);

    let neighbors_per_entity = spec.indirect_per_entity.div_ceil(PERSON_FACT_TEMPLATES);

    let mut forget = Vec::new();
    let mut retain = Vec::new();
    let mut test = Vec::new();

    for e in 0..spec.n_entities {
        let name = person_name(&name_perm, e);
        let entity_id = name.replace(' ', "-");
        let city = home_city(&city_perm, e);

        // Forget facts: private knowledge about the person. Slot 0 is the
        // birthplace fact, which ties the person to their home city.
        for slot in 0..spec.forget_per_entity {
            let mut rng = SplitMix64::keyed(spec.seed, &format!("forget/{entity_id}/{slot}"));
            let mut fact = person_fact(&name, slot, &mut rng);
            if slot == 0 {
                fact.answer = format!("{name} was born in {city}");
            }
            forget.push(QAPair {
                id: format!("f-{e:03}-{slot}"),
                entity_id: entity_id.clone(),
                question: fact.question,
                answer: fact.answer,
                neighbor_kind: NeighborKind::Forget,
            });
        }

        // Direct neighbors: facts about the person's home city.
        for slot in 0..spec.direct_per_entity {
            let mut rng = SplitMix64::keyed(spec.seed, &format!("direct/{entity_id}/{slot}"));
            let fact = place_fact(&city, slot, &mut rng);
            retain.push(QAPair {
                id: format!("d-{e:03}-{slot}"),
                entity_id: entity_id.clone(),
                question: fact.question,
                answer: fact.answer.clone(),
                neighbor_kind: NeighborKind::Direct,
            });
            if slot < spec.test_direct_per_entity {
                test.push(QAPair {
                    id: format!("td-{e:03}-{slot}"),
                    entity_id: entity_id.clone(),
                    question: fact.test_question,
                    answer: fact.answer,
                    neighbor_kind: NeighborKind::TestDirect,
                });
            }
        }

        // Indirect neighbors: same-profession peers, described with the
        // same fact templates as the forget targets.
        for j in 0..spec.indirect_per_entity {
            let peer_idx = spec.n_entities + e * neighbors_per_entity + j / PERSON_FACT_TEMPLATES;
            let peer = person_name(&name_perm, peer_idx);
            let slot = j % PERSON_FACT_TEMPLATES;
            let mut rng = SplitMix64::keyed(spec.seed, &format!("indirect/{entity_id}/{j}"));
            let fact = person_fact(&peer, slot, &mut rng);
            retain.push(QAPair {
                id: format!("i-{e:03}-{j}"),
                entity_id: entity_id.clone(),
                question: fact.question,
                answer: fact.answer.clone(),
                neighbor_kind: NeighborKind::Indirect,
            });
            if j < spec.test_indirect_per_entity {
                test.push(QAPair {
                    id: format!("ti-{e:03}-{j}"),
                    entity_id: entity_id.clone(),
                    question: fact.test_question,
                    answer: fact.answer,
                    neighbor_kind: NeighborKind::TestIndirect,
                });
            }
        }
    }

    for i in 0..spec.n_general {
        let mut rng = SplitMix64::keyed(spec.seed, &format!("general/{i}"));
        let fact = general_fact(i, &mut rng);
        retain.push(QAPair {
            id: format!("g-{i:04}"),
            entity_id: GENERAL_ENTITY.to_string(),
            question: fact.question,
            answer: fact.answer.clone(),
            neighbor_kind: NeighborKind::General,
        });
        if i < spec.n_test_general {
            test.push(QAPair {
                id: format!("tg-{i:04}"),
                entity_id: GENERAL_ENTITY.to_string(),
                question: fact.test_question,
                answer: fact.answer,
                neighbor_kind: NeighborKind::TestGeneral,
            });
        }
    }

    CorpusBundle::new(forget, retain, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_to_jsonl, syntactic_similarity_mean};

    #[test]
    fn counts_match_the_request() {
        let spec = SyntheticSpec::new(10, 5, 4, 8, 30, 7);
        let bundle = generate_synthetic(&spec).unwrap();
        assert_eq!(bundle.forget().len(), 50);
        assert_eq!(bundle.retain().len(), 10 * (4 + 8) + 30);
        assert_eq!(bundle.retain().len(), 150);
        assert_eq!(bundle.entities().len(), 10);
        // Test set: rephrasings of retained facts.
        assert_eq!(bundle.test().len(), 10 * (2 + 2) + 7);
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = SyntheticSpec::new(4, 3, 2, 4, 12, 99);
        let a = corpus_to_jsonl(&generate_synthetic(&spec).unwrap()).unwrap();
        let b = corpus_to_jsonl(&generate_synthetic(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_produce_different_facts() {
        let a = generate_synthetic(&SyntheticSpec::new(2, 3, 2, 4, 8, 7)).unwrap();
        let b = generate_synthetic(&SyntheticSpec::new(2, 3, 2, 4, 8, 8)).unwrap();
        let answers = |bundle: &CorpusBundle| {
            bundle
                .all_pairs()
                .map(|p| p.answer.clone())
                .collect::<Vec<_>>()
        };
        assert_ne!(answers(&a), answers(&b));
    }

    #[test]
    fn zero_counts_are_rejected() {
        let mut spec = SyntheticSpec::new(2, 2, 2, 2, 2, 1);
        spec.n_general = 0;
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::InvalidArgument(_))
        ));
        let spec = SyntheticSpec {
            forget_per_entity: 0,
            ..SyntheticSpec::new(2, 2, 2, 2, 2, 1)
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn forget_questions_stay_syntactically_close_to_retain() {
        let bundle = generate_synthetic(&SyntheticSpec::new(10, 5, 4, 8, 30, 7)).unwrap();
        let mean = syntactic_similarity_mean(bundle.forget(), bundle.retain()).unwrap();
        assert!(mean >= 0.3, "similarity mean {mean}");
    }

    #[test]
    fn forget_answers_are_unique_and_entity_tagged() {
        let bundle = generate_synthetic(&SyntheticSpec::new(8, 5, 2, 4, 10, 3)).unwrap();
        let mut answers: Vec<&str> = bundle.forget().iter().map(|p| p.answer.as_str()).collect();
        answers.sort_unstable();
        let before = answers.len();
        answers.dedup();
        assert_eq!(before, answers.len(), "forget answers must be distinct");
        for pair in bundle.forget() {
            assert!(!pair.entity_id.is_empty());
        }
    }

    #[test]
    fn test_pairs_rephrase_retained_answers() {
        let bundle = generate_synthetic(&SyntheticSpec::new(5, 4, 3, 6, 12, 21)).unwrap();
        for t in bundle.test() {
            let twin = bundle
                .retain()
                .iter()
                .find(|r| r.answer == t.answer)
                .unwrap_or_else(|| panic!("test pair {} has no retained twin", t.id));
            assert_ne!(twin.question, t.question, "question must be rephrased");
        }
    }

    #[test]
    fn home_cities_are_unique_per_entity() {
        let bundle = generate_synthetic(&SyntheticSpec::new(20, 1, 1, 1, 1, 5)).unwrap();
        let mut cities: Vec<String> = bundle
            .forget()
            .iter()
            .map(|p| {
                p.answer
                    .split(" was born in ")
                    .nth(1)
                    .expect("birth fact")
                    .to_string()
            })
            .collect();
        cities.sort();
        let before = cities.len();
        cities.dedup();
        assert_eq!(before, cities.len());
    }
}
