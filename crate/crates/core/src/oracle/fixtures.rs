use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::EnumerableSpace;
use crate::error::{EdaError, Result};
use crate::model::{
    BernoulliProductModel, CategoricalProductModel, ModelOptions, ModelState, SearchModel,
};
use crate::objectives::{Domain, Objective};

/// An initial model on a small enumerable space.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub model: SearchModel,
    pub space: EnumerableSpace,
    /// Also run the Monte-Carlo convergence check on this fixture.
    pub mc: bool,
}

impl Fixture {
    pub fn new(name: &str, model: SearchModel, objective: Objective) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            model,
            space: EnumerableSpace::new(objective)?,
            mc: false,
        })
    }

    pub fn bernoulli_dim(&self) -> Option<usize> {
        match &self.model {
            SearchModel::Bernoulli(m) => Some(m.dim()),
            _ => None,
        }
    }

    pub fn objective_positive(&self) -> bool {
        self.space.values().iter().all(|&f| f > 0.0)
    }
}

fn bern(p: Vec<f64>) -> Result<SearchModel> {
    Ok(SearchModel::Bernoulli(BernoulliProductModel::new(p, ModelOptions::default())?))
}

/// Interior Bernoulli model and strictly positive table on `dim` bits.
pub fn random_positive_fixture(name: &str, dim: usize, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = (0..dim).map(|_| rng.random_range(0.1..0.9)).collect();
    let table = (0..1usize << dim).map(|_| rng.random_range(0.5..3.0)).collect();
    Fixture::new(name, bern(p)?, Objective::table(Domain::Binary { dim }, table)?)
}

/// The fixtures shipped under the name `default`.
pub fn default_fixtures() -> Result<Vec<Fixture>> {
    let bits = |dim| Domain::Binary { dim };
    let mut onemax2 = Fixture::new("onemax2+1", bern(vec![0.5, 0.5])?, Objective::onemax(2).with_offset(1.0))?;
    onemax2.mc = true;
    Ok(vec![
        Fixture::new("bern1", bern(vec![0.5])?, Objective::table(bits(1), vec![1.0, 3.0])?)?,
        onemax2,
        Fixture::new("onemax3+1", bern(vec![0.5; 3])?, Objective::onemax(3).with_offset(1.0))?,
        Fixture::new("trap3", bern(vec![0.5; 3])?, Objective::trap(3, 1))?,
        Fixture::new("const3", bern(vec![0.3, 0.6, 0.5])?, Objective::constant(bits(3), 2.0))?,
        random_positive_fixture("rand2", 2, 2)?,
        random_positive_fixture("rand3", 3, 3)?,
        Fixture::new(
            "catmatch2x3+1",
            SearchModel::Categorical(CategoricalProductModel::new(
                vec![vec![0.2, 0.3, 0.5], vec![0.4, 0.4, 0.2]],
                ModelOptions::default(),
            )?),
            Objective::cat_match(2, 3).with_offset(1.0),
        )?,
    ])
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FixtureEntry {
    name: String,
    model: ModelState,
    /// Objective spec such as `onemax:3+1`; exclusive with `table`.
    #[serde(default)]
    objective: Option<String>,
    /// Explicit values in lexicographic state order.
    #[serde(default)]
    table: Option<Vec<f64>>,
    #[serde(default)]
    mc: bool,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FixtureFile {
    fixtures: Vec<FixtureEntry>,
}

/// Parses a JSON fixture file: `{"fixtures": [{"name", "model", "objective" | "table", "mc"?}]}`.
pub fn parse_fixtures(text: &str) -> Result<Vec<Fixture>> {
    let file: FixtureFile =
        serde_json::from_str(text).map_err(|e| EdaError::config("fixtures", e.to_string()))?;
    if file.fixtures.is_empty() {
        return Err(EdaError::config("fixtures", "list is empty"));
    }
    file.fixtures
        .into_iter()
        .map(|entry| {
            let field = format!("fixtures.{}", entry.name);
            let model = SearchModel::from_state(&entry.model, ModelOptions::default())
                .map_err(|e| EdaError::config(format!("{field}.model"), e.to_string()))?;
            let objective = match (entry.objective, entry.table) {
                (Some(spec), None) => spec
                    .parse::<Objective>()
                    .map_err(|e| EdaError::config(format!("{field}.objective"), e.to_string()))?,
                (None, Some(values)) => {
                    let domain = match model.family() {
                        crate::model::Family::Bernoulli { dim } => Domain::Binary { dim },
                        crate::model::Family::Categorical { dim, arity } => Domain::Categorical { dim, arity },
                        other => {
                            return Err(EdaError::config(
                                format!("{field}.model"),
                                format!("{} is not enumerable", other.describe()),
                            ))
                        }
                    };
                    Objective::table(domain, values)
                        .map_err(|e| EdaError::config(format!("{field}.table"), e.to_string()))?
                }
                _ => {
                    return Err(EdaError::config(
                        field,
                        "give exactly one of `objective` and `table`",
                    ))
                }
            };
            let mut fixture = Fixture::new(&entry.name, model, objective)
                .map_err(|e| EdaError::config(format!("{field}.objective"), e.to_string()))?;
            fixture.mc = entry.mc;
            Ok(fixture)
        })
        .collect()
}

/// `default`, or a path to a JSON fixture file.
pub fn load_fixture_set(name: &str) -> Result<Vec<Fixture>> {
    if name == "default" {
        return default_fixtures();
    }
    let path = Path::new(name);
    if !path.is_file() {
        return Err(EdaError::config(
            "fixture_set",
            format!("unknown fixture set `{name}` (expected `default` or a JSON file)"),
        ));
    }
    let text = std::fs::read_to_string(path).map_err(|e| EdaError::io(path, e))?;
    parse_fixtures(&text)
}
