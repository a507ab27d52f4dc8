//! Trajectory files.
//!
//! Both formats open with the line `advsysid-traj v1`.
//!
//! * CSV: a column header `t,u_1..u_m,y_1..y_r,xi,w_1..w_n` followed by one
//!   row per time step. States are not stored; the CSV is meant for external
//!   analysis.
//! * Binary log: after the header line, little-endian `u64` values `n, m, r,
//!   k, len`, the `f64` input standard deviation, then per step `u` (m),
//!   `y` (r), `xi` (one byte), `w` (n) and `x` (n) as `f64`. It round-trips a
//!   [`Trajectory`] exactly and carries the attack log needed for replay.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const TRAJECTORY_HEADER: &str = "advsysid-traj v1";

pub fn write_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let (n, m, r) = (traj.n(), traj.m(), traj.r());
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=m).map(|i| format!("u_{i}")));
    cols.extend((1..=r).map(|i| format!("y_{i}")));
    cols.push("xi".into());
    cols.extend((1..=n).map(|i| format!("w_{i}")));
    writeln!(out, "{}", cols.join(","))?;
    for t in 0..traj.len() {
        let mut row = vec![t.to_string()];
        row.extend(traj.inputs[t].iter().map(f64::to_string));
        row.extend(traj.observations[t].iter().map(f64::to_string));
        row.push(u8::from(traj.attack_flags[t]).to_string());
        row.extend(traj.attack_values[t].iter().map(f64::to_string));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Columns recovered from a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryColumns {
    pub inputs: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub attack_flags: Vec<bool>,
    pub attack_values: Vec<Vector>,
}

pub fn read_csv<R: Read>(input: R) -> Result<TrajectoryColumns> {
    let mut lines = BufReader::new(input).lines();
    let magic = lines.next().transpose()?.unwrap_or_default();
    if magic.trim() != TRAJECTORY_HEADER {
        return Err(Error::Parse(format!("unexpected trajectory header {magic:?}")));
    }
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Parse("missing column header".into()))?;
    let count = |prefix: &str| header.split(',').filter(|c| c.starts_with(prefix)).count();
    let (m, r, n) = (count("u_"), count("y_"), count("w_"));
    let mut cols = TrajectoryColumns {
        inputs: Vec::new(),
        observations: Vec::new(),
        attack_flags: Vec::new(),
        attack_values: Vec::new(),
    };
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + m + r + n {
            return Err(Error::Parse(format!(
                "row {row} has {} fields, expected {}",
                fields.len(),
                2 + m + r + n
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {row}: {e}")))
        };
        let vec_at = |start: usize, len: usize| -> Result<Vector> {
            let vals = fields[start..start + len]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>>>()?;
            Ok(Vector::from_vec(vals))
        };
        cols.inputs.push(vec_at(1, m)?);
        cols.observations.push(vec_at(1 + m, r)?);
        cols.attack_flags.push(fields[1 + m + r].trim() == "1");
        cols.attack_values.push(vec_at(2 + m + r, n)?);
    }
    Ok(cols)
}

pub fn write_binary_log<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(TRAJECTORY_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for v in [traj.n(), traj.m(), traj.r(), traj.k, traj.len()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&traj.input_std.to_le_bytes())?;
    let put = |out: &mut BufWriter<W>, v: &Vector| -> std::io::Result<()> {
        v.iter().try_for_each(|x| out.write_all(&x.to_le_bytes()))
    };
    for t in 0..traj.len() {
        put(&mut out, &traj.inputs[t])?;
        put(&mut out, &traj.observations[t])?;
        out.write_all(&[u8::from(traj.attack_flags[t])])?;
        put(&mut out, &traj.attack_values[t])?;
        put(&mut out, &traj.states[t])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary_log<R: Read>(input: R) -> Result<Trajectory> {
    let mut input = BufReader::new(input);
    let mut magic = vec![0u8; TRAJECTORY_HEADER.len() + 1];
    input.read_exact(&mut magic)?;
    if &magic[..TRAJECTORY_HEADER.len()] != TRAJECTORY_HEADER.as_bytes() {
        return Err(Error::Parse("not an advsysid trajectory log".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |input: &mut BufReader<R>| -> Result<usize> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word) as usize)
    };
    let n = next_u64(&mut input)?;
    let m = next_u64(&mut input)?;
    let r = next_u64(&mut input)?;
    let k = next_u64(&mut input)?;
    let len = next_u64(&mut input)?;
    let read_f64 = |input: &mut BufReader<R>| -> Result<f64> {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    let input_std = read_f64(&mut input)?;
    let read_vec = |input: &mut BufReader<R>, len: usize| -> Result<Vector> {
        let vals = (0..len)
            .map(|_| read_f64(input))
            .collect::<Result<Vec<_>>>()?;
        Ok(Vector::from_vec(vals))
    };
    let mut traj = Trajectory {
        inputs: Vec::with_capacity(len),
        states: Vec::with_capacity(len),
        observations: Vec::with_capacity(len),
        attack_flags: Vec::with_capacity(len),
        attack_values: Vec::with_capacity(len),
        input_std,
        k,
    };
    for _ in 0..len {
        traj.inputs.push(read_vec(&mut input, m)?);
        traj.observations.push(read_vec(&mut input, r)?);
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        traj.attack_flags.push(flag[0] != 0);
        traj.attack_values.push(read_vec(&mut input, n)?);
        traj.states.push(read_vec(&mut input, n)?);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::rng::from_seed;

    fn sample_trajectory() -> (SystemModel, Trajectory) {
        let mut rng = from_seed(12);
        let sys = gen_system(4, 2, 3, 0.6, &mut rng).unwrap();
        let attack = AttackModel::reference_sign_adaptive(0.2).unwrap();
        let traj = simulate(
            &sys,
            &attack,
            &Vector::from_element(4, 1000.0),
            60,
            10.0,
            5,
            &mut rng,
        )
        .unwrap();
        (sys, traj)
    }

    #[test]
    fn binary_log_replays_bitwise() {
        let (sys, traj) = sample_trajectory();
        let mut buf = Vec::new();
        write_binary_log(&traj, &mut buf).unwrap();
        let back = read_binary_log(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
        let replay = simulate_replay(
            &sys,
            &back.states[0],
            back.inputs.clone(),
            &back.attack_flags,
            &back.attack_values,
            back.input_std,
            back.k,
        )
        .unwrap();
        assert_eq!(replay, traj);
    }

    #[test]
    fn csv_keeps_columns_exactly() {
        let (_, traj) = sample_trajectory();
        let mut buf = Vec::new();
        write_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert_eq!(
            lines.next(),
            Some("t,u_1,u_2,y_1,y_2,y_3,xi,w_1,w_2,w_3,w_4")
        );
        let cols = read_csv(buf.as_slice()).unwrap();
        assert_eq!(cols.inputs, traj.inputs);
        assert_eq!(cols.observations, traj.observations);
        assert_eq!(cols.attack_flags, traj.attack_flags);
        assert_eq!(cols.attack_values, traj.attack_values);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_binary_log(&b"something else entirely"[..]).is_err());
        assert!(read_csv(&b"t,u_1\n0,1\n"[..]).is_err());
    }
}
