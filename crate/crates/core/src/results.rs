//! Per-image results CSV: one row per classified test image.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::classifier::{BinaryOutcome, Nearest};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str = "datetime_of_operation,num_few_shot_nominal_imgs,image_name,classification_result,non_defect_prob,defect_prob,nominal_description,defective_description";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub datetime_of_operation: String,
    pub num_few_shot_nominal_imgs: usize,
    pub image_name: String,
    pub classification_result: String,
    pub non_defect_prob: f64,
    pub defect_prob: f64,
    pub nominal_description: String,
    pub defective_description: String,
}

/// `"Image <exemplar id>: <caption>"`.
pub fn exemplar_description(n: &Nearest) -> String {
    format!("Image {}: {}", n.exemplar_id, n.caption)
}

impl ResultRow {
    /// Few-shot row: descriptions name the nearest exemplar of each side.
    pub fn few_shot(
        datetime: &str,
        nominal_count: usize,
        image_name: &str,
        outcome: &BinaryOutcome,
    ) -> Self {
        Self::build(
            datetime,
            nominal_count,
            image_name,
            outcome,
            exemplar_description(&outcome.nominal),
            exemplar_description(&outcome.defect),
        )
    }

    /// Zero-shot row: descriptions are the winning prompt of each side.
    pub fn zero_shot(datetime: &str, image_name: &str, outcome: &BinaryOutcome) -> Self {
        Self::build(
            datetime,
            0,
            image_name,
            outcome,
            outcome.nominal.caption.clone(),
            outcome.defect.caption.clone(),
        )
    }

    fn build(
        datetime: &str,
        nominal_count: usize,
        image_name: &str,
        outcome: &BinaryOutcome,
        nominal_description: String,
        defective_description: String,
    ) -> Self {
        ResultRow {
            datetime_of_operation: datetime.to_string(),
            num_few_shot_nominal_imgs: nominal_count,
            image_name: image_name.to_string(),
            classification_result: outcome.verdict().to_string(),
            non_defect_prob: outcome.non_defect_prob,
            defect_prob: outcome.defect_prob,
            nominal_description,
            defective_description,
        }
    }
}

/// Writes the header and rows; probabilities use three decimals.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.datetime_of_operation.as_str(),
            &r.num_few_shot_nominal_imgs.to_string(),
            &r.image_name,
            &r.classification_result,
            &format!("{:.3}", r.non_defect_prob),
            &format!("{:.3}", r.defect_prob),
            &r.nominal_description,
            &r.defective_description,
        ])?;
    }
    w.flush().map_err(|e| Error::Store(e.to_string()))
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected results header {:?}", header.join(",")),
        });
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
