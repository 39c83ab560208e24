//! Binary trajectory checkpoints.
//!
//! Layout: magic `NDIF1`, a little-endian header, a field directory of
//! `(name, family, N, count)` entries and then the raw arrays of every
//! snapshot in directory order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::constitutive::ModelSpec;
use crate::error::{Error, Result};
use crate::fem::{ElementFamily, Mesh1D};
use crate::membrane::GatingField;
use crate::splitting::{RunMeta, Trajectory};
use crate::state::{ElementPairing, SystemLayout, TissueState};

pub const MAGIC: &[u8; 5] = b"NDIF1";
pub const VERSION: u32 = 1;

const GATING_NAME: &str = "gating";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldEntry {
    pub name: String,
    pub family: ElementFamily,
    pub n: u64,
    pub count: u64,
}

fn family_code(f: ElementFamily) -> u8 {
    match f {
        ElementFamily::P0 => 0,
        ElementFamily::P1c => 1,
        ElementFamily::P1dc => 2,
        ElementFamily::P2c => 3,
    }
}

fn family_from(code: u8) -> Result<ElementFamily> {
    Ok(match code {
        0 => ElementFamily::P0,
        1 => ElementFamily::P1c,
        2 => ElementFamily::P1dc,
        3 => ElementFamily::P2c,
        c => return Err(Error::Restore(format!("unknown element family code {c}"))),
    })
}

fn directory(spec: &ModelSpec, layout: &SystemLayout, num_gates: usize) -> Vec<FieldEntry> {
    let n = layout.mesh.num_cells() as u64;
    let mut dir: Vec<FieldEntry> = (0..layout.num_fields())
        .map(|f| {
            let map = layout.field_map(f);
            FieldEntry {
                name: layout.field_name(spec, f),
                family: map.family(),
                n,
                count: map.num_dofs() as u64,
            }
        })
        .collect();
    dir.push(FieldEntry {
        name: GATING_NAME.into(),
        family: layout.pairing.primary,
        n,
        count: (layout.primary_map.num_dofs() * num_gates) as u64,
    });
    dir
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        v.iter().try_for_each(|&x| self.f64(x))
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Restore(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Restore("count out of range".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(Error::Restore(format!("implausible name length {len}")));
        }
        let mut b = vec![0u8; len];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Restore(format!("truncated checkpoint: {e}")))?;
        String::from_utf8(b).map_err(|_| Error::Restore("field name is not UTF-8".into()))
    }
}

fn write_state<W: Write>(w: &mut Writer<W>, s: &TissueState, g: &GatingField) -> Result<()> {
    w.f64(s.t)?;
    for f in 0..s.layout.num_fields() {
        w.f64s(&s.field_values(f))?;
    }
    w.f64s(&g.values)
}

/// Writes every snapshot, the level before the last one and the run counters.
pub fn checkpoint(traj: &Trajectory, spec: &ModelSpec, path: impl AsRef<Path>) -> Result<()> {
    let first = traj
        .states
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot checkpoint an empty trajectory".into()))?;
    let layout = &first.layout;
    let num_gates = traj.gating[0].num_gates;
    let mut w = Writer(BufWriter::new(File::create(path)?));
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.f64(layout.mesh.length())?;
    w.u64(layout.mesh.num_cells() as u64)?;
    w.u8(family_code(layout.pairing.alpha))?;
    w.u8(family_code(layout.pairing.primary))?;
    w.u64(layout.num_compartments as u64)?;
    w.u64(layout.num_ions as u64)?;
    w.u8(layout.zero_flow as u8)?;
    w.u64(num_gates as u64)?;
    let m = &traj.meta;
    for v in [m.steps, m.newton_iterations, m.jacobians, m.factorizations] {
        w.u64(v as u64)?;
    }
    w.f64s(&[m.t_pde, m.t_ode, m.t_assembly, m.t_lu, m.t_total])?;
    let dir = directory(spec, layout, num_gates);
    w.u64(dir.len() as u64)?;
    for e in &dir {
        w.str(&e.name)?;
        w.u8(family_code(e.family))?;
        w.u64(e.n)?;
        w.u64(e.count)?;
    }
    w.u64(traj.states.len() as u64)?;
    w.u8(traj.last_previous.is_some() as u8)?;
    for (s, g) in traj.states.iter().zip(&traj.gating) {
        write_state(&mut w, s, g)?;
    }
    if let Some(p) = &traj.last_previous {
        w.f64(p.t)?;
        for f in 0..p.layout.num_fields() {
            w.f64s(&p.field_values(f))?;
        }
    }
    w.0.flush()?;
    Ok(())
}

fn read_state<R: Read>(r: &mut Reader<R>, layout: &Arc<SystemLayout>, dir: &[FieldEntry]) -> Result<TissueState> {
    let t = r.f64()?;
    let mut s = TissueState::zeros(layout.clone(), t);
    for (f, e) in dir.iter().enumerate().take(layout.num_fields()) {
        let v = r.f64s(e.count as usize)?;
        s.set_field(f, &v)?;
    }
    Ok(s)
}

/// Reads a checkpoint written for the same model.
pub fn restore(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Trajectory> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    let magic: [u8; 5] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::Restore(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Restore(format!("unsupported version {version}")));
    }
    let length = r.f64()?;
    let n = r.usize()?;
    let pairing = ElementPairing {
        alpha: family_from(r.u8()?)?,
        primary: family_from(r.u8()?)?,
    };
    let nc = r.usize()?;
    let ni = r.usize()?;
    let zero_flow = r.u8()? != 0;
    if nc != spec.num_compartments() || ni != spec.num_ions() || zero_flow != spec.zero_flow {
        return Err(Error::Restore(format!(
            "checkpoint holds {nc} compartments, {ni} ions, zero_flow={zero_flow}; model differs"
        )));
    }
    let num_gates = r.usize()?;
    let mesh = Mesh1D::new(length, n).map_err(|e| Error::Restore(e.to_string()))?;
    let layout = Arc::new(SystemLayout::new(spec, mesh, pairing).map_err(|e| Error::Restore(e.to_string()))?);
    let meta = RunMeta {
        steps: r.usize()?,
        newton_iterations: r.usize()?,
        jacobians: r.usize()?,
        factorizations: r.usize()?,
        t_pde: r.f64()?,
        t_ode: r.f64()?,
        t_assembly: r.f64()?,
        t_lu: r.f64()?,
        t_total: r.f64()?,
    };
    let count = r.usize()?;
    let mut dir = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        dir.push(FieldEntry {
            name: r.str()?,
            family: family_from(r.u8()?)?,
            n: r.u64()?,
            count: r.u64()?,
        });
    }
    let expected = directory(spec, &layout, num_gates);
    if dir != expected {
        return Err(Error::Restore("field directory does not match the model layout".into()));
    }
    let snapshots = r.usize()?;
    let has_previous = r.u8()? != 0;
    let gating_count = expected.last().map_or(0, |e| e.count as usize);
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        gating: Vec::new(),
        last_previous: None,
        meta,
    };
    for _ in 0..snapshots {
        let s = read_state(&mut r, &layout, &dir)?;
        let values = r.f64s(gating_count)?;
        traj.times.push(s.t);
        traj.states.push(s);
        traj.gating.push(GatingField {
            map: layout.primary_map.clone(),
            num_gates,
            values,
        });
    }
    if has_previous {
        traj.last_previous = Some(read_state(&mut r, &layout, &dir)?);
    }
    if traj.states.is_empty() {
        return Err(Error::Restore("checkpoint holds no snapshots".into()));
    }
    let mut tail = [0u8; 1];
    if r.0.read(&mut tail)? != 0 {
        return Err(Error::Restore("trailing bytes after the last array".into()));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::setup_zero_flow_csd;
    use crate::membrane::HhGating;
    use crate::pde::BoundaryMode;
    use crate::splitting::{SchemeConfig, Simulation};

    fn config(steps: usize) -> SchemeConfig {
        SchemeConfig {
            sample_interval: Some(5.0 * 0.01),
            ..SchemeConfig::reference(12, 0.01, steps as f64 * 0.01)
        }
    }

    fn run_steps(steps: usize) -> (crate::csd::CsdSetup, Trajectory) {
        let s = setup_zero_flow_csd(12, ElementPairing::zero_flow_default(), Default::default()).unwrap();
        let hh = HhGating::new(&s.spec);
        let sim = Simulation::new(
            config(steps),
            s.spec.clone(),
            &hh,
            s.state.clone(),
            s.gating.clone(),
            Some(s.trigger),
            BoundaryMode::Natural,
        )
        .unwrap();
        let traj = sim.run(|_, _| {}).unwrap();
        (s, traj)
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (s, traj) = run_steps(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ndif");
        checkpoint(&traj, &s.spec, &path).unwrap();
        let back = restore(&path, &s.spec).unwrap();
        assert_eq!(bits(&back.times), bits(&traj.times));
        for (a, b) in back.states.iter().zip(&traj.states) {
            assert_eq!(bits(&a.values), bits(&b.values));
        }
        for (a, b) in back.gating.iter().zip(&traj.gating) {
            assert_eq!(bits(&a.values), bits(&b.values));
        }
        let (p, q) = (back.last_previous.unwrap(), traj.last_previous.unwrap());
        assert_eq!(bits(&p.values), bits(&q.values));
        assert_eq!(p.t.to_bits(), q.t.to_bits());
        assert_eq!(back.meta.steps, traj.meta.steps);
        assert_eq!(back.meta.t_total.to_bits(), traj.meta.t_total.to_bits());
    }

    #[test]
    fn restored_run_continues_like_a_straight_run() {
        let (_, straight) = run_steps(20);
        let (s, half) = run_steps(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ndif");
        checkpoint(&half, &s.spec, &path).unwrap();
        let back = restore(&path, &s.spec).unwrap();
        let hh = HhGating::new(&s.spec);
        let sim = Simulation::resume(config(20), s.spec.clone(), &hh, &back, Some(s.trigger), BoundaryMode::Natural).unwrap();
        let cont = sim.run(|_, _| {}).unwrap();
        assert_eq!(cont.meta.steps, 20);
        assert_eq!(bits(&cont.last_state().values), bits(&straight.last_state().values));
        assert_eq!(bits(&cont.last_gating().values), bits(&straight.last_gating().values));
    }

    #[test]
    fn corrupt_header_is_a_restore_error() {
        let (s, traj) = run_steps(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ndif");
        checkpoint(&traj, &s.spec, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(restore(&path, &s.spec), Err(Error::Restore(_))));

        bytes[0] = b'N';
        bytes[5] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(restore(&path, &s.spec), Err(Error::Restore(_))));

        std::fs::write(&path, &bytes[..40]).unwrap();
        assert!(matches!(restore(&path, &s.spec), Err(Error::Restore(_))));
    }

    #[test]
    fn layout_mismatch_is_a_restore_error() {
        let (s, traj) = run_steps(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zf.ndif");
        checkpoint(&traj, &s.spec, &path).unwrap();
        let full = crate::csd::setup_full_csd(12, ElementPairing::full_default(), Default::default()).unwrap();
        assert!(matches!(restore(&path, &full.spec), Err(Error::Restore(_))));
    }
}
