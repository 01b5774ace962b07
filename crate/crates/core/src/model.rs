//! Class models and the bundle of everything inference needs.

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mixture::MixtureCoefficients;
use crate::occlusion::OccluderBank;
use crate::tensor::{Position, WindowShape};
use crate::vmf::VmfKernelBank;

pub const DEFAULT_MIXTURES: usize = 4;

/// Which point of the object a part model is anchored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Corner {
    Center,
    TopLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 3] = [Corner::Center, Corner::TopLeft, Corner::BottomRight];

    pub fn tag(self) -> &'static str {
        match self {
            Corner::Center => "ct",
            Corner::TopLeft => "tl",
            Corner::BottomRight => "br",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Corner::ALL.into_iter().find(|c| c.tag() == tag)
    }

    /// The feature cell this part is anchored on for a box in cell units:
    /// the cell holding the box center, its first cell, or its last cell.
    pub fn anchor(self, bbox: &BBox) -> Position {
        let cell = |v: f64| v.max(0.0) as usize;
        match self {
            Corner::Center => {
                Position::new(cell(((bbox.y0 + bbox.y1) / 2.0).floor()), cell(((bbox.x0 + bbox.x1) / 2.0).floor()))
            }
            Corner::TopLeft => Position::new(cell(bbox.y0.floor()), cell(bbox.x0.floor())),
            Corner::BottomRight => Position::new(cell(bbox.y1.ceil() - 1.0), cell(bbox.x1.ceil() - 1.0)),
        }
    }
}

/// `M` viewpoint mixtures over one window shape, with optional context mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct PartModel {
    pub shape: WindowShape,
    pub object: Vec<MixtureCoefficients>,
    pub context: Option<Vec<MixtureCoefficients>>,
}

impl PartModel {
    pub fn new(
        shape: WindowShape,
        object: Vec<MixtureCoefficients>,
        context: Option<Vec<MixtureCoefficients>>,
    ) -> Result<Self> {
        let part = Self { shape, object, context };
        part.validate()?;
        Ok(part)
    }

    pub fn m(&self) -> usize {
        self.object.len()
    }

    pub fn k(&self) -> usize {
        self.object[0].k()
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.object.is_empty() {
            return Err(Error::Config("part model needs at least one mixture".into()));
        }
        let k = self.object[0].k();
        let all = self.object.iter().chain(self.context.iter().flatten());
        for mix in all {
            if mix.height() != self.shape.height || mix.width() != self.shape.width || mix.k() != k {
                return Err(Error::Dimension(format!(
                    "mixture {}x{}x{} does not fit window {}x{} with K={k}",
                    mix.height(),
                    mix.width(),
                    mix.k(),
                    self.shape.height,
                    self.shape.width
                )));
            }
            mix.validate()?;
        }
        if let Some(ctx) = &self.context {
            if ctx.len() != self.object.len() {
                return Err(Error::Dimension(format!(
                    "{} context mixtures for {} object mixtures",
                    ctx.len(),
                    self.object.len()
                )));
            }
        }
        Ok(())
    }

    pub fn context_of(&self, m: usize) -> Option<&MixtureCoefficients> {
        self.context.as_ref().map(|c| &c[m])
    }

    fn mixtures(&self) -> impl Iterator<Item = &MixtureCoefficients> {
        self.object.iter().chain(self.context.iter().flatten())
    }

    fn mixtures_mut(&mut self) -> impl Iterator<Item = &mut MixtureCoefficients> {
        self.object.iter_mut().chain(self.context.iter_mut().flatten())
    }

    fn param_len(&self) -> usize {
        self.mixtures().map(|m| m.logits().len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: usize,
    pub name: String,
    pub center: PartModel,
    /// Top-left and bottom-right corner models.
    pub corners: Option<(PartModel, PartModel)>,
}

impl ClassModel {
    pub fn part(&self, corner: Corner) -> Option<&PartModel> {
        match corner {
            Corner::Center => Some(&self.center),
            Corner::TopLeft => self.corners.as_ref().map(|c| &c.0),
            Corner::BottomRight => self.corners.as_ref().map(|c| &c.1),
        }
    }

    pub fn part_mut(&mut self, corner: Corner) -> Option<&mut PartModel> {
        match corner {
            Corner::Center => Some(&mut self.center),
            Corner::TopLeft => self.corners.as_mut().map(|c| &mut c.0),
            Corner::BottomRight => self.corners.as_mut().map(|c| &mut c.1),
        }
    }

    pub fn parts(&self) -> impl Iterator<Item = (Corner, &PartModel)> {
        Corner::ALL.into_iter().filter_map(move |c| self.part(c).map(|p| (c, p)))
    }

    pub fn validate(&self) -> Result<()> {
        for (_, p) in self.parts() {
            p.validate()?;
        }
        Ok(())
    }
}

/// Which parameter group a flat parameter index belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Kernels,
    Mixtures,
    Corners,
}

/// A contiguous run of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpan {
    pub group: ParamGroup,
    pub start: usize,
    pub len: usize,
}

/// Kernel bank, class models and occluder bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionalNet {
    pub bank: VmfKernelBank,
    pub classes: Vec<ClassModel>,
    pub occluders: OccluderBank,
}

impl CompositionalNet {
    pub fn new(bank: VmfKernelBank, classes: Vec<ClassModel>, occluders: OccluderBank) -> Result<Self> {
        let net = Self { bank, classes, occluders };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.bank.validate()?;
        self.occluders.validate()?;
        if self.classes.is_empty() {
            return Err(Error::Config("model has no classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.label != i {
                return Err(Error::Invariant(format!("class {i} carries label {}", c.label)));
            }
            c.validate()?;
            if c.center.k() != self.bank.k() {
                return Err(Error::Dimension(format!(
                    "class {i} mixtures use K={} but the bank has {}",
                    c.center.k(),
                    self.bank.k()
                )));
            }
        }
        if self.occluders.k() != self.bank.k() {
            return Err(Error::Dimension(format!(
                "occluders use K={} but the bank has {}",
                self.occluders.k(),
                self.bank.k()
            )));
        }
        Ok(())
    }

    pub fn has_corners(&self) -> bool {
        self.classes.iter().all(|c| c.corners.is_some())
    }

    /// Layout of the flat parameter vector: kernels, then for every class the
    /// center part's logits (object then context), then its corner parts.
    pub fn param_spans(&self) -> Vec<ParamSpan> {
        let mut spans = vec![ParamSpan { group: ParamGroup::Kernels, start: 0, len: self.bank.mus().len() }];
        let mut at = self.bank.mus().len();
        for class in &self.classes {
            for (corner, part) in class.parts() {
                let group = if corner == Corner::Center { ParamGroup::Mixtures } else { ParamGroup::Corners };
                let len = part.param_len();
                spans.push(ParamSpan { group, start: at, len });
                at += len;
            }
        }
        spans
    }

    pub fn param_len(&self) -> usize {
        self.param_spans().iter().map(|s| s.len).sum()
    }

    /// Offset of a part's logits in the flat parameter vector.
    pub fn part_offset(&self, class: usize, corner: Corner) -> usize {
        let mut at = self.bank.mus().len();
        for c in &self.classes[..class] {
            at += c.parts().map(|(_, p)| p.param_len()).sum::<usize>();
        }
        for (c, p) in self.classes[class].parts() {
            if c == corner {
                return at;
            }
            at += p.param_len();
        }
        panic!("class {class} has no {corner:?} part");
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = self.bank.mus().to_vec();
        for class in &self.classes {
            for (_, part) in class.parts() {
                for mix in part.mixtures() {
                    out.extend_from_slice(mix.logits());
                }
            }
        }
        out
    }

    /// Overwrite all parameters from a flat vector in [`Self::params`] layout.
    /// Kernels are taken as given; callers renormalize when needed.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Dimension(format!("{} parameters for a model with {}", params.len(), self.param_len())));
        }
        let kd = self.bank.mus().len();
        self.bank.mus_mut().copy_from_slice(&params[..kd]);
        let mut at = kd;
        for class in &mut self.classes {
            for corner in Corner::ALL {
                let Some(part) = class.part_mut(corner) else { continue };
                for mix in part.mixtures_mut() {
                    let n = mix.logits().len();
                    mix.update_logits(|l| l.copy_from_slice(&params[at..at + n]));
                    at += n;
                }
            }
        }
        Ok(())
    }
}
