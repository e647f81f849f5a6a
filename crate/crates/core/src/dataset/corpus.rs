use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::classes::VocClass;
use super::spectrum::Spectrum;
use super::template::PeakTemplate;
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{rng_for, stream};

pub const N_FOLDS: usize = 5;
pub const RECIPE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRecipe {
    pub class: VocClass,
    pub count: usize,
    pub min_ppm: f64,
    pub max_ppm: f64,
}

/// Everything needed to rebuild a stand-in corpus bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecipe {
    pub format_version: u32,
    pub seed: u64,
    pub classes: Vec<ClassRecipe>,
    pub template: PeakTemplate,
}

const DEFAULT_RANGE: (f64, f64) = (2.0, 50.0);

impl CorpusRecipe {
    fn uniform(seed: u64, counts: impl Fn(VocClass) -> usize) -> Self {
        let classes = VocClass::ALL
            .iter()
            .map(|&class| {
                let (min_ppm, max_ppm) = if class.is_air() { (0.0, 0.0) } else { DEFAULT_RANGE };
                ClassRecipe {
                    class,
                    count: counts(class),
                    min_ppm,
                    max_ppm,
                }
            })
            .collect();
        CorpusRecipe {
            format_version: RECIPE_FORMAT_VERSION,
            seed,
            classes,
            template: PeakTemplate::default(),
        }
    }

    /// `per_class` spectra for each of the ten classes.
    pub fn balanced(per_class: usize, seed: u64) -> Self {
        Self::uniform(seed, |_| per_class)
    }

    /// Unbalanced corpus in which o- and p-xylene are starved (3 spectra
    /// against 150 for the largest class) and m-xylene is under-represented.
    pub fn starved(seed: u64) -> Self {
        Self::starved_scaled(150, seed)
    }

    /// [`CorpusRecipe::starved`] with the largest class set to `max_count`.
    /// The starved classes keep at most 2 % of `max_count` (at least one spectrum).
    pub fn starved_scaled(max_count: usize, seed: u64) -> Self {
        let frac = |f: f64| ((max_count as f64 * f).round() as usize).max(1);
        let starved = ((max_count as f64 * 0.02).floor() as usize).max(1);
        Self::uniform(seed, |c| match c {
            VocClass::Acetone | VocClass::Ethanol | VocClass::Styrene => max_count,
            VocClass::Isopropanol => frac(0.87),
            VocClass::Benzene | VocClass::Toluene => frac(0.8),
            VocClass::Air => frac(0.67),
            VocClass::MXylene => frac(0.4),
            VocClass::OXylene | VocClass::PXylene => starved,
        })
    }

    pub fn count(&self, class: VocClass) -> usize {
        self.classes.iter().filter(|c| c.class == class).map(|c| c.count).sum()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != RECIPE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported recipe format_version {}",
                self.format_version
            )));
        }
        if self.total() == 0 {
            return Err(Error::Config("recipe produces no spectra".into()));
        }
        for c in &self.classes {
            let range_ok = c.min_ppm >= 0.0 && c.max_ppm >= c.min_ppm && c.max_ppm.is_finite();
            if !range_ok {
                return Err(Error::Config(format!(
                    "{}: invalid concentration range [{}, {}]",
                    c.class, c.min_ppm, c.max_ppm
                )));
            }
            if c.class.is_air() && c.max_ppm != 0.0 {
                return Err(Error::Config("air must have a zero concentration range".into()));
            }
        }
        self.template.validate()
    }
}

/// Labeled spectra with a stratified fold assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    spectra: Vec<Spectrum>,
    folds: Vec<usize>,
}

/// Indices into a corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Corpus {
    /// Wraps spectra and assigns stratified folds from `seed`.
    pub fn new(spectra: Vec<Spectrum>, seed: u64) -> Result<Self> {
        if spectra.is_empty() {
            return Err(Error::Config("corpus is empty".into()));
        }
        let folds = stratified_folds(&spectra, seed);
        Ok(Corpus { spectra, folds })
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.spectra
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.folds[index]
    }

    pub fn class_count(&self, class: VocClass) -> usize {
        self.spectra.iter().filter(|s| s.class() == class).count()
    }

    /// Validation = members of `fold`, train = everything else.
    pub fn kfold_split(&self, fold: usize) -> Result<Split> {
        if fold >= N_FOLDS {
            return Err(Error::Config(format!("fold {fold} out of range 0..{N_FOLDS}")));
        }
        let (validation, train) = (0..self.len()).partition(|&i| self.folds[i] == fold);
        Ok(Split { train, validation })
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&Spectrum> {
        indices.iter().map(|&i| &self.spectra[i]).collect()
    }
}

/// Within each class the members are shuffled and dealt round-robin, so fold
/// sizes per class differ by at most one.
fn stratified_folds(spectra: &[Spectrum], seed: u64) -> Vec<usize> {
    let mut folds = vec![0; spectra.len()];
    for class in VocClass::ALL {
        let mut members: Vec<usize> = (0..spectra.len())
            .filter(|&i| spectra[i].class() == class)
            .collect();
        let mut rng = rng_for(seed, &[stream::FOLDS, class.index() as u64]);
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            folds[i] = pos % N_FOLDS;
        }
    }
    folds
}

/// Generates the corpus described by `recipe`. Spectrum `i` draws from its
/// own RNG stream, so generation parallelises without changing the result.
pub fn build_corpus(recipe: &CorpusRecipe) -> Result<Corpus> {
    recipe.validate()?;
    let plan: Vec<&ClassRecipe> = recipe
        .classes
        .iter()
        .flat_map(|c| std::iter::repeat_n(c, c.count))
        .collect();
    let spectra = par::map_indexed(plan.len(), |i| {
        let c = plan[i];
        let mut rng = rng_for(recipe.seed, &[stream::CORPUS, i as u64]);
        let conc = if c.class.is_air() || c.max_ppm == c.min_ppm {
            c.min_ppm
        } else {
            rng.random_range(c.min_ppm..=c.max_ppm)
        };
        recipe.template.synth_spectrum(c.class, conc, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Corpus::new(spectra, recipe.seed)
}
