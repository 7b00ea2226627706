//! Insert-stream fuzzing for the catalog's six referential constraints.

use std::collections::{BTreeMap, BTreeSet};

use qdh_core::tabular::{
    Cell, InstrumentRow, MaterialRow, MeasurementRow, SampleRow, TabularStore, INSTRUMENTS, MATERIALS, MEASUREMENTS, SAMPLES,
};
use rand::seq::IndexedRandom;
use rand::Rng;

/// Constraint numbers violated by a catalog dump, recomputed from rows.
pub fn violated(store: &TabularStore) -> BTreeSet<u8> {
    let mut materials = BTreeSet::new();
    let mut instruments = BTreeSet::new();
    let mut samples: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    let mut starts: Vec<&str> = Vec::new();
    let mut measurements = Vec::new();
    fn text(c: Option<&Cell>) -> Option<&str> {
        match c {
            Some(Cell::Text(t)) => Some(t.as_str()),
            _ => None,
        }
    }
    for row in store.iter_rows(MATERIALS) {
        materials.insert(text(row.get("mat_id")).unwrap());
    }
    for row in store.iter_rows(INSTRUMENTS) {
        instruments.insert(text(row.get("instr_id")).unwrap());
    }
    for row in store.iter_rows(SAMPLES) {
        samples.insert(text(row.get("sample_id")).unwrap(), text(row.get("end_material_id")));
        if let Some(Cell::List(l)) = row.get("start_material_ids") {
            starts.extend(l.iter().map(String::as_str));
        }
    }
    for row in store.iter_rows(MEASUREMENTS) {
        measurements.push((
            text(row.get("sample_id")).unwrap(),
            text(row.get("material_id")).unwrap(),
            text(row.get("instr_id")).unwrap(),
        ));
    }
    let mut out = BTreeSet::new();
    for (sample, material, instr) in &measurements {
        match samples.get(sample) {
            None => {
                out.insert(1);
            }
            Some(end) if *end != Some(*material) => {
                out.insert(2);
            }
            _ => {}
        }
        if !materials.contains(material) {
            out.insert(4);
        }
        if !instruments.contains(instr) {
            out.insert(6);
        }
    }
    if samples.values().flatten().any(|e| !materials.contains(e)) {
        out.insert(3);
    }
    if starts.iter().any(|s| !materials.contains(s)) {
        out.insert(5);
    }
    out
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub attempts: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<u8, usize>,
    pub failures: Vec<String>,
}

#[derive(Default)]
struct Model {
    materials: Vec<String>,
    instruments: Vec<String>,
    /// sample -> end material
    samples: BTreeMap<String, Option<String>>,
    /// measurement -> material
    measured: BTreeMap<String, String>,
    next: usize,
}

impl Model {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }
    fn sample_with_end(&self, rng: &mut impl Rng) -> Option<(String, String)> {
        let ready: Vec<(&String, &String)> = self.samples.iter().filter_map(|(s, e)| e.as_ref().map(|e| (s, e))).collect();
        ready.choose(rng).map(|(s, e)| ((*s).clone(), (*e).clone()))
    }
}

fn sample_row(id: &str, end: Option<String>, starts: Vec<String>) -> SampleRow {
    SampleRow {
        sample_id: id.into(),
        name: "fuzz".into(),
        project_id: "p".into(),
        owner: "o".into(),
        date: "2024-01-01T00:00:00Z".into(),
        start_material_ids: starts,
        end_material_id: end,
        description: String::new(),
        status: "unknown".into(),
    }
}

fn measurement_row(id: &str, sample: &str, material: &str, instr: &str) -> MeasurementRow {
    MeasurementRow {
        measurement_id: id.into(),
        sample_id: sample.into(),
        material_id: material.into(),
        instr_id: instr.into(),
        measure_date: "2024-01-02T00:00:00Z".into(),
        measure_owner: "o".into(),
        measure_type: "XRD".into(),
        description: String::new(),
        file_type: "dat".into(),
        file_location_path: format!("{sample}/xrd/{id}.dat"),
    }
}

/// Runs `attempts` random inserts, about half carrying exactly one injected
/// violation, checking the outcome of each and the stored state after each.
pub fn fuzz_constraints(rng: &mut impl Rng, attempts: usize) -> FuzzReport {
    let mut store = TabularStore::new();
    let mut m = Model::default();
    let mut report = FuzzReport::default();

    let mut step = 0;
    while report.attempts < attempts {
        step += 1;
        report.attempts += 1;
        let missing = m.fresh("ghost");
        // (table, row, expected constraint, effect on the model when accepted)
        let choice = rng.random_range(0..100);
        let (table, row, expected, sample_update, measurement_update): (
            &str,
            qdh_core::Row,
            Option<u8>,
            Option<(String, Option<String>)>,
            Option<(String, String)>,
        ) = if choice < 15 || m.materials.len() < 2 {
            let id = m.fresh("mat");
            m.materials.push(id.clone());
            let row = MaterialRow {
                mat_id: id,
                name: "m".into(),
                supplier: String::new(),
                form: String::new(),
                description: String::new(),
            };
            (MATERIALS, row.to_row(), None, None, None)
        } else if choice < 22 || m.instruments.is_empty() {
            let id = m.fresh("instr");
            m.instruments.push(id.clone());
            let row = InstrumentRow {
                instr_id: id,
                kind: "XRD".into(),
                make: String::new(),
                model: String::new(),
                specification: String::new(),
            };
            (INSTRUMENTS, row.to_row(), None, None, None)
        } else if choice < 45 {
            let id = m.fresh("s");
            let end = if rng.random_bool(0.9) { Some(m.materials.choose(rng).unwrap().clone()) } else { None };
            let mut starts: Vec<String> = (0..rng.random_range(0..3)).map(|_| m.materials.choose(rng).unwrap().clone()).collect();
            let fault = rng.random_range(0..4);
            let (end, expected) = match fault {
                0 => (Some(missing.clone()), Some(3)),
                1 => {
                    starts.push(missing.clone());
                    (end, Some(5))
                }
                _ => (end, None),
            };
            let row = sample_row(&id, end.clone(), starts).to_row();
            (SAMPLES, row, expected, Some((id, end)), None)
        } else if choice < 55 && !m.samples.is_empty() {
            // Replace an existing sample row, possibly moving its end material.
            let id = m.samples.keys().collect::<Vec<_>>().choose(rng).map(|s| (*s).clone()).unwrap();
            let end = Some(m.materials.choose(rng).unwrap().clone());
            let breaks_2 = m
                .measured
                .iter()
                .any(|(meas, mat)| meas.starts_with(&format!("{id}/")) && Some(mat) != end.as_ref());
            let row = sample_row(&id, end.clone(), Vec::new()).to_row();
            let expected = breaks_2.then_some(2);
            match store.upsert_row(SAMPLES, row, None) {
                Ok(_) if expected.is_none() => {
                    report.accepted += 1;
                    m.samples.insert(id, end);
                }
                Err(e) if expected.is_some() && e.constraint_number() == expected => {
                    *report.rejected.entry(expected.unwrap()).or_default() += 1;
                }
                other => report.failures.push(format!("step {step}: replace sample {id}: expected {expected:?}, got {other:?}")),
            }
            let bad = violated(&store);
            if !bad.is_empty() {
                report.failures.push(format!("step {step}: stored state violates {bad:?}"));
            }
            continue;
        } else if let Some((sample, end)) = m.sample_with_end(rng) {
            let instr = m.instruments.choose(rng).unwrap().clone();
            let other = m.materials.iter().find(|x| **x != end).cloned();
            let id = format!("{sample}/{}", m.fresh("meas"));
            let (row, expected) = match rng.random_range(0..8) {
                0 => (measurement_row(&id, &missing, &end, &instr), Some(1)),
                1 if other.is_some() => (measurement_row(&id, &sample, other.as_ref().unwrap(), &instr), Some(2)),
                2 => (measurement_row(&id, &sample, &missing, &instr), Some(4)),
                3 => (measurement_row(&id, &sample, &end, &missing), Some(6)),
                _ => (measurement_row(&id, &sample, &end, &instr), None),
            };
            (MEASUREMENTS, row.to_row(), expected, None, Some((id, end)))
        } else {
            report.attempts -= 1;
            continue;
        };

        match store.insert_row(table, row, None) {
            Ok(_) if expected.is_none() => {
                report.accepted += 1;
                if let Some((s, e)) = sample_update {
                    m.samples.insert(s, e);
                }
                if let Some((meas, mat)) = measurement_update {
                    m.measured.insert(meas, mat);
                }
            }
            Err(e) if expected.is_some() && e.constraint_number() == expected => {
                *report.rejected.entry(expected.unwrap()).or_default() += 1;
                if table == MATERIALS || table == INSTRUMENTS {
                    unreachable!("plain inserts carry no fault");
                }
            }
            other => report.failures.push(format!("step {step}: {table}: expected {expected:?}, got {other:?}")),
        }
        let bad = violated(&store);
        if !bad.is_empty() {
            report.failures.push(format!("step {step}: stored state violates {bad:?}"));
        }
    }
    report
}
