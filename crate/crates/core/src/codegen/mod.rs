//! Kernel source rendering from text templates, and the versioned JSON
//! document format for kernel IR.
//!
//! A template is plain text split into output files by `@@file NAME` lines.
//! `@@set KEY VALUE` lines configure the renderer (`history_fetch_1`,
//! `history_fetch_2`: expressions that read the unknown one or two steps
//! back). Everything else is copied with `{{placeholder}}` tokens replaced.
//! A placeholder alone on its line expands to indented lines, and the line
//! disappears when the expansion is empty.
//!
//! Placeholders: `dimension`, `unknown`, `scheme`, `num_vars`, and for each
//! region `volume`, `dirichlet`, `neumann` the four bodies
//! `<region>_declarations`, `<region>_prelude`, `<region>_matrix`,
//! `<region>_vector`.

mod cexpr;
mod ir_doc;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::expr::format_number;
use crate::problem::Coefficient;
use crate::symbolic::{BasisSel, KernelIr, Operand, Region, RegionKernel, ScalarProgram, Special};

pub use ir_doc::{parse_ir, serialize_ir, IrDocument};

/// Template used when none is given on the command line.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../templates/dendro_kernels.tmpl");

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("template line {line}: unknown placeholder `{name}`")]
    UnknownPlaceholder { name: String, line: usize },
    #[error("template line {line}: unterminated `{{{{`")]
    Unterminated { line: usize },
    #[error("template line {line}: {message}")]
    Directive { line: usize, message: String },
    #[error("template has no `@@file` sections")]
    NoFiles,
    #[error("template never uses `{0}`, which this kernel needs")]
    MissingPlaceholder(String),
    #[error("template setting `{0}` is required by this kernel")]
    MissingSetting(String),
    #[error("coefficient `{0}` has no value to emit")]
    MissingCoefficient(String),
    #[error("kernel IR document: {0}")]
    Document(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
struct TemplateLine {
    number: usize,
    pieces: Vec<Piece>,
}

/// A parsed kernel template.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTemplate {
    settings: BTreeMap<String, String>,
    files: Vec<(String, Vec<TemplateLine>)>,
}

const GLOBAL_SLOTS: [&str; 4] = ["dimension", "unknown", "scheme", "num_vars"];
const REGION_SLOTS: [&str; 4] = ["declarations", "prelude", "matrix", "vector"];
const REGIONS: [(Region, &str); 3] = [
    (Region::Volume, "volume"),
    (Region::DirichletSurface, "dirichlet"),
    (Region::NeumannSurface, "neumann"),
];

fn is_known(name: &str) -> bool {
    GLOBAL_SLOTS.contains(&name)
        || REGIONS
            .iter()
            .any(|(_, r)| name.strip_prefix(r).and_then(|s| s.strip_prefix('_')).is_some_and(|s| REGION_SLOTS.contains(&s)))
}

fn split_line(text: &str, number: usize) -> Result<Vec<Piece>, CodegenError> {
    let mut pieces = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        if start > 0 {
            pieces.push(Piece::Text(rest[..start].to_string()));
        }
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(CodegenError::Unterminated { line: number })?;
        let name = after[..end].trim();
        if !is_known(name) {
            return Err(CodegenError::UnknownPlaceholder {
                name: name.to_string(),
                line: number,
            });
        }
        pieces.push(Piece::Slot(name.to_string()));
        rest = &after[end + 2..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(pieces)
}

impl KernelTemplate {
    pub fn parse(text: &str) -> Result<Self, CodegenError> {
        let mut settings = BTreeMap::new();
        let mut files: Vec<(String, Vec<TemplateLine>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let number = i + 1;
            if let Some(rest) = line.strip_prefix("@@") {
                let (directive, arg) = rest.split_once(' ').unwrap_or((rest, ""));
                match directive {
                    "file" if !arg.trim().is_empty() => files.push((arg.trim().to_string(), Vec::new())),
                    "set" => {
                        let (key, value) = arg.split_once(' ').ok_or_else(|| CodegenError::Directive {
                            line: number,
                            message: "`@@set` needs a key and a value".into(),
                        })?;
                        settings.insert(key.to_string(), value.trim().to_string());
                    }
                    _ => {
                        return Err(CodegenError::Directive {
                            line: number,
                            message: format!("unknown directive `@@{rest}`"),
                        })
                    }
                }
                continue;
            }
            let pieces = split_line(line, number)?;
            match files.last_mut() {
                Some((_, lines)) => lines.push(TemplateLine { number, pieces }),
                None if line.trim().is_empty() => {}
                None => {
                    return Err(CodegenError::Directive {
                        line: number,
                        message: "text before the first `@@file`".into(),
                    })
                }
            }
        }
        if files.is_empty() {
            return Err(CodegenError::NoFiles);
        }
        Ok(KernelTemplate { settings, files })
    }

    pub fn default_template() -> Self {
        KernelTemplate::parse(DEFAULT_TEMPLATE).expect("shipped template parses")
    }

    pub fn load(path: &Path) -> Result<Self, CodegenError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodegenError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        KernelTemplate::parse(&text)
    }

    fn uses(&self, name: &str) -> bool {
        self.files
            .iter()
            .flat_map(|(_, l)| l.iter())
            .flat_map(|l| l.pieces.iter())
            .any(|p| matches!(p, Piece::Slot(s) if s == name))
    }
}

/// C-side name of a history value.
pub fn history_name(unknown: &str, slot: u8) -> String {
    match slot {
        1 => format!("value__{unknown}_1"),
        s => format!("value_PREV{s}_{unknown}_1"),
    }
}

fn operand_text(op: &Operand, unknown: &str) -> String {
    match op {
        Operand::Coef(c) => c.clone(),
        Operand::CoefComp(c, k) => format!("{c}[{k}]"),
        Operand::Position(k) => format!("p.{}()", ["x", "y", "z"][*k]),
        Operand::Time => "t".into(),
        Operand::TimeStep => "dt".into(),
        Operand::Special(s) => s.name(),
        Operand::Previous(slot) => history_name(unknown, *slot),
        Operand::Field(text) => format!("({})", cexpr::field_text(text)),
    }
}

/// `coef * a * pow(b, 2)`, omitting a unit coefficient.
fn scalar_text(s: &ScalarProgram, unknown: &str) -> String {
    let factors: Vec<String> = s
        .factors
        .iter()
        .map(|f| {
            let name = operand_text(&f.operand, unknown);
            if f.power == 1 {
                name
            } else {
                format!("pow({name}, {})", f.power)
            }
        })
        .collect();
    match (s.coef, factors.is_empty()) {
        (c, true) => format_number(c),
        (c, false) if c == 1.0 => factors.join(" * "),
        (c, false) if c == -1.0 => format!("-{}", factors.join(" * ")),
        (c, false) => format!("{} * {}", format_number(c), factors.join(" * ")),
    }
}

fn basis_text(sel: BasisSel, index: &str) -> String {
    match sel {
        BasisSel::Value => format!("fe.N({index})"),
        BasisSel::Deriv(k) => format!("fe.dN({index}, {k})"),
    }
}

fn coefficient_decl(name: &str, op: &Operand, coefs: &BTreeMap<String, Coefficient>) -> Result<String, CodegenError> {
    let value = |c: &Coefficient| match c {
        Coefficient::Scalar(v) => Ok(format_number(*v)),
        Coefficient::Field(e) => Ok(cexpr::c_expr(e)),
        Coefficient::Vector(_) => Err(CodegenError::MissingCoefficient(name.to_string())),
    };
    let missing = || CodegenError::MissingCoefficient(name.to_string());
    Ok(match (op, coefs.get(name)) {
        (Operand::Coef(_), Some(c)) => format!("const double {name} = {};", value(c)?),
        (Operand::CoefComp(..), Some(Coefficient::Vector(v))) => {
            let comps = v.iter().map(value).collect::<Result<Vec<_>, _>>()?;
            format!("const double {name}[{}] = {{{}}};", comps.len(), comps.join(", "))
        }
        _ => return Err(missing()),
    })
}

fn special_decl(s: Special) -> String {
    let rhs = match s {
        Special::NTilde(k) => format!("sbm.surrogate_normal[{k}]"),
        Special::NTrue(k) => format!("sbm.true_normal[{k}]"),
        Special::Disp(k) => format!("sbm.displacement[{k}]"),
        Special::ElementDiameter => "fe.elementDiameter()".into(),
        Special::DirichletValue => "sbm.dirichlet_value".into(),
        Special::NeumannValue => "sbm.neumann_value".into(),
    };
    format!("const double {} = {rhs};", s.name())
}

fn region_bodies(
    kernel: &RegionKernel,
    ir: &KernelIr,
    coefs: &BTreeMap<String, Coefficient>,
    settings: &BTreeMap<String, String>,
) -> Result<[Vec<String>; 4], CodegenError> {
    let unknown = &ir.unknown;
    let mut decls = Vec::new();
    let mut declared = BTreeSet::new();
    for op in kernel.operands() {
        match op {
            Operand::Coef(c) | Operand::CoefComp(c, _) => {
                if declared.insert(c.clone()) {
                    decls.push(coefficient_decl(c, op, coefs)?);
                }
            }
            Operand::Special(s) => decls.push(special_decl(*s)),
            _ => {}
        }
    }
    let mut prelude = Vec::new();
    for slot in &kernel.prelude {
        let key = format!("history_fetch_{slot}");
        let fetch = settings.get(&key).ok_or(CodegenError::MissingSetting(key))?;
        prelude.push(format!("double {} = {fetch};", history_name(unknown, *slot)));
    }
    let matrix = kernel
        .bilinear
        .iter()
        .map(|c| {
            format!(
                "N += ({}*(wdetj * {})*{});",
                basis_text(c.test, "row"),
                scalar_text(&c.scalar, unknown),
                basis_text(c.trial, "col")
            )
        })
        .collect();
    let vector = kernel
        .linear
        .iter()
        .map(|c| format!("N += ({}*(wdetj*({})));", basis_text(c.test, "row"), scalar_text(&c.scalar, unknown)))
        .collect();
    Ok([decls, prelude, matrix, vector])
}

/// Render every template file for `ir`. Coefficient values come from
/// `coefs`; files come back in template order.
pub fn render_kernels(
    ir: &KernelIr,
    coefs: &BTreeMap<String, Coefficient>,
    template: &KernelTemplate,
) -> Result<Vec<(String, String)>, CodegenError> {
    let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
    values.insert("dimension".into(), vec![ir.dimension.to_string()]);
    values.insert("unknown".into(), vec![ir.unknown.clone()]);
    values.insert(
        "scheme".into(),
        vec![ir.scheme.map_or("STEADY", |s| s.name()).to_string()],
    );
    values.insert("num_vars".into(), vec!["1".into()]);
    for (region, name) in REGIONS {
        let kernel = ir.region(region);
        let needed = [
            ("matrix", !kernel.bilinear.is_empty()),
            ("vector", !kernel.linear.is_empty()),
            ("prelude", !kernel.prelude.is_empty()),
        ];
        for (slot, _) in needed.iter().filter(|n| n.1) {
            let key = format!("{name}_{slot}");
            if !template.uses(&key) {
                return Err(CodegenError::MissingPlaceholder(key));
            }
        }
        let bodies = region_bodies(kernel, ir, coefs, &template.settings)?;
        for (slot, body) in REGION_SLOTS.iter().zip(bodies) {
            values.insert(format!("{name}_{slot}"), body);
        }
    }

    let mut out = Vec::new();
    for (file, lines) in &template.files {
        let mut text = String::new();
        for line in lines {
            let alone = match line.pieces.as_slice() {
                [Piece::Slot(s)] => Some(("", s)),
                [Piece::Text(ws), Piece::Slot(s)] if ws.trim().is_empty() => Some((ws.as_str(), s)),
                _ => None,
            };
            if let Some((indent, slot)) = alone {
                for l in &values[slot.as_str()] {
                    text.push_str(indent);
                    text.push_str(l);
                    text.push('\n');
                }
                continue;
            }
            for p in &line.pieces {
                match p {
                    Piece::Text(t) => text.push_str(t),
                    Piece::Slot(s) => {
                        let v = &values[s.as_str()];
                        if v.len() > 1 {
                            return Err(CodegenError::Directive {
                                line: line.number,
                                message: format!("`{s}` expands to several lines and must stand alone"),
                            });
                        }
                        text.push_str(v.first().map_or("", String::as_str));
                    }
                }
            }
            text.push('\n');
        }
        out.push((file.clone(), text));
    }
    Ok(out)
}

/// Render and write the kernel files into `out_dir`.
pub fn emit_kernels(
    ir: &KernelIr,
    coefs: &BTreeMap<String, Coefficient>,
    template: &KernelTemplate,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CodegenError> {
    let files = render_kernels(ir, coefs, template)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CodegenError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_weak_form;
    use crate::problem::TimeScheme;
    use crate::symbolic::{classify, discretize_time, expand, lower, SymbolTable};

    fn heat_ir(scheme: Option<TimeScheme>) -> KernelIr {
        let table = SymbolTable::new(3, "u", "v").with_scalar("alpha");
        let text = "Dt(u*v) + dot(grad(u),grad(v)) + dirichletBoundary(alpha / elementDiameter() * (u - dirichletValue()) * v)";
        let terms = expand(&parse_weak_form(text).unwrap(), &table).unwrap();
        let d = discretize_time(terms, scheme).unwrap();
        lower(&classify(d.terms.clone()).unwrap(), 3, "u", &d)
    }

    fn coefs() -> BTreeMap<String, Coefficient> {
        [("alpha".to_string(), Coefficient::Scalar(200.0))].into_iter().collect()
    }

    #[test]
    fn bdf2_lines() {
        let files = render_kernels(&heat_ir(Some(TimeScheme::Bdf2)), &coefs(), &KernelTemplate::default_template()).unwrap();
        let volume = &files[0].1;
        assert!(volume.contains("      N += (fe.N(row)*(wdetj * 1.5)*fe.N(col));\n"));
        assert!(volume.contains("N += (fe.dN(row, 2)*(wdetj * dt)*fe.dN(col, 2));"));
        assert!(volume.contains("N += (fe.N(row)*(wdetj*(2 * value__u_1)));"));
        assert!(volume.contains("N += (fe.N(row)*(wdetj*(-0.5 * value_PREV2_u_1)));"));
        assert!(volume.contains("  double value__u_1 = p_data_->valueFEM(fe, 0);\n"));
        assert!(volume.contains("double value_PREV2_u_1 = p_data_->valueFEM(fe, 0 + NUM_VARS);"));
        assert!(volume.contains("const int n_dimensions = 3;"));
        let surface = &files[1].1;
        assert!(surface.contains("const double alpha = 200;"));
        assert!(surface.contains("const double h = fe.elementDiameter();"));
    }

    #[test]
    fn steady_has_no_history() {
        let table = SymbolTable::new(2, "u", "v");
        let terms = expand(&parse_weak_form("dot(grad(u),grad(v))").unwrap(), &table).unwrap();
        let d = discretize_time(terms, None).unwrap();
        let ir = lower(&classify(d.terms.clone()).unwrap(), 2, "u", &d);
        let files = render_kernels(&ir, &BTreeMap::new(), &KernelTemplate::default_template()).unwrap();
        assert!(!files[0].1.contains("valueFEM"));
        // An empty vector body leaves just the accumulator.
        assert!(files[0].1.contains("    double N = 0.0;\n    be(row) += N;\n"));
    }

    #[test]
    fn template_errors() {
        assert!(matches!(
            KernelTemplate::parse("@@file a\n{{nope}}\n"),
            Err(CodegenError::UnknownPlaceholder { line: 2, .. })
        ));
        assert!(matches!(KernelTemplate::parse("@@file a\n{{unknown\n"), Err(CodegenError::Unterminated { line: 2 })));
        assert!(matches!(KernelTemplate::parse("{{unknown}}\n"), Err(CodegenError::Directive { line: 1, .. })));
        assert!(matches!(KernelTemplate::parse(""), Err(CodegenError::NoFiles)));
        let t = KernelTemplate::parse("@@file a\n{{volume_vector}}\n").unwrap();
        assert!(matches!(
            render_kernels(&heat_ir(Some(TimeScheme::EulerImplicit)), &coefs(), &t),
            Err(CodegenError::MissingPlaceholder(p)) if p == "volume_matrix"
        ));
        let t = KernelTemplate::parse("@@file a\n{{volume_matrix}}\n{{volume_vector}}\n{{volume_prelude}}\n{{dirichlet_matrix}}\n{{dirichlet_vector}}\n").unwrap();
        assert!(matches!(
            render_kernels(&heat_ir(Some(TimeScheme::EulerImplicit)), &coefs(), &t),
            Err(CodegenError::MissingSetting(s)) if s == "history_fetch_1"
        ));
    }

    #[test]
    fn inline_placeholders() {
        let t = KernelTemplate::parse("@@set history_fetch_1 u_old\n@@file k.txt\ndim={{dimension}} var={{ unknown }}\n{{volume_matrix}}\n{{volume_prelude}}\n{{volume_vector}}\n{{dirichlet_matrix}}\n{{dirichlet_vector}}\n").unwrap();
        let out = render_kernels(&heat_ir(Some(TimeScheme::EulerImplicit)), &coefs(), &t).unwrap();
        assert!(out[0].1.starts_with("dim=3 var=u\n"));
        assert!(out[0].1.contains("double value__u_1 = u_old;"));
        assert!(out[0].1.contains("N += (fe.N(row)*(wdetj*(alpha * dt * pow(h, -1) * g_D)));"), "{}", out[0].1);
    }
}
