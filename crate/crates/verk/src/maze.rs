//! Perfect-maze generation, the ASCII grid format, move verification, and
//! dataset export for external trainers.
//!
//! Mazes are logical n x n cell grids carved by randomized depth-first
//! search, so every pair of cells is joined by exactly one simple path. A
//! maze renders to a (2n+1) x (2n+1) character grid: '*' walls, '.' floor,
//! 'S' start, 'E' goal. The verifier simulates a move string over U/D/L/R
//! from the start and succeeds iff it ends exactly on the goal without
//! crossing a wall or leaving the grid.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("cells_n must be at least 2, got {0}")]
    TooSmall(usize),
    #[error("ascii grid is not a well-formed maze: {0}")]
    BadAscii(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub cells_n: usize,
    pub seed: u64,
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Maze {
    pub cells_n: usize,
    /// Carved passages between adjacent cells, endpoints ordered.
    pub passages: BTreeSet<(Cell, Cell)>,
    pub start: Cell,
    pub goal: Cell,
}

fn edge(a: Cell, b: Cell) -> (Cell, Cell) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Maze {
    pub fn has_passage(&self, a: Cell, b: Cell) -> bool {
        self.passages.contains(&edge(a, b))
    }

    fn neighbors(&self, (r, c): Cell) -> Vec<Cell> {
        let n = self.cells_n;
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push((r - 1, c));
        }
        if r + 1 < n {
            out.push((r + 1, c));
        }
        if c > 0 {
            out.push((r, c - 1));
        }
        if c + 1 < n {
            out.push((r, c + 1));
        }
        out
    }

    /// Shortest solution as a move string, by BFS over passages.
    pub fn bfs_solution(&self) -> String {
        let n = self.cells_n;
        let mut prev: Vec<Option<(Cell, char)>> = vec![None; n * n];
        let idx = |(r, c): Cell| r * n + c;
        let mut frontier = vec![self.start];
        let mut seen = vec![false; n * n];
        seen[idx(self.start)] = true;
        while !frontier.is_empty() && !seen[idx(self.goal)] {
            let mut next = Vec::new();
            for &cell in &frontier {
                for nb in self.neighbors(cell) {
                    if self.has_passage(cell, nb) && !seen[idx(nb)] {
                        seen[idx(nb)] = true;
                        let mv = match (nb.0 as isize - cell.0 as isize, nb.1 as isize - cell.1 as isize)
                        {
                            (-1, 0) => 'U',
                            (1, 0) => 'D',
                            (0, -1) => 'L',
                            _ => 'R',
                        };
                        prev[idx(nb)] = Some((cell, mv));
                        next.push(nb);
                    }
                }
            }
            frontier = next;
        }
        let mut moves = Vec::new();
        let mut cur = self.goal;
        while cur != self.start {
            let (p, mv) = prev[idx(cur)].expect("perfect maze is connected");
            moves.push(mv);
            cur = p;
        }
        moves.reverse();
        moves.into_iter().collect()
    }
}

/// Randomized depth-first-search carve. The wall layout depends only on
/// `spec.seed`; start and goal are drawn from the caller's stream.
pub fn generate_maze(spec: &MazeSpec, endpoint_rng: &mut StdRng) -> Result<Maze, MazeError> {
    if spec.cells_n < 2 {
        return Err(MazeError::TooSmall(spec.cells_n));
    }
    let n = spec.cells_n;
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let mut passages = BTreeSet::new();
    let mut visited = vec![false; n * n];
    let idx = |(r, c): Cell| r * n + c;
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    while let Some(&cell) = stack.last() {
        let mut unvisited: Vec<Cell> = Vec::with_capacity(4);
        let (r, c) = cell;
        if r > 0 && !visited[idx((r - 1, c))] {
            unvisited.push((r - 1, c));
        }
        if r + 1 < n && !visited[idx((r + 1, c))] {
            unvisited.push((r + 1, c));
        }
        if c > 0 && !visited[idx((r, c - 1))] {
            unvisited.push((r, c - 1));
        }
        if c + 1 < n && !visited[idx((r, c + 1))] {
            unvisited.push((r, c + 1));
        }
        match unvisited.choose(&mut rng) {
            Some(&next) => {
                visited[idx(next)] = true;
                passages.insert(edge(cell, next));
                stack.push(next);
            }
            None => {
                stack.pop();
            }
        }
    }
    let start = (endpoint_rng.gen_range(0..n), endpoint_rng.gen_range(0..n));
    let goal = loop {
        let g = (endpoint_rng.gen_range(0..n), endpoint_rng.gen_range(0..n));
        if g != start {
            break g;
        }
    };
    Ok(Maze {
        cells_n: n,
        passages,
        start,
        goal,
    })
}

/// Render to the (2n+1)-square character grid, rows joined by newlines.
pub fn render_ascii(maze: &Maze) -> String {
    let n = maze.cells_n;
    let side = 2 * n + 1;
    let mut grid = vec![vec!['*'; side]; side];
    for r in 0..n {
        for c in 0..n {
            grid[2 * r + 1][2 * c + 1] = '.';
            if c + 1 < n && maze.has_passage((r, c), (r, c + 1)) {
                grid[2 * r + 1][2 * c + 2] = '.';
            }
            if r + 1 < n && maze.has_passage((r, c), (r + 1, c)) {
                grid[2 * r + 2][2 * c + 1] = '.';
            }
        }
    }
    grid[2 * maze.start.0 + 1][2 * maze.start.1 + 1] = 'S';
    grid[2 * maze.goal.0 + 1][2 * maze.goal.1 + 1] = 'E';
    grid.into_iter()
        .map(|row| row.into_iter().collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of `render_ascii`.
pub fn parse_ascii(text: &str) -> Result<Maze, MazeError> {
    let rows: Vec<&str> = text.lines().collect();
    let side = rows.len();
    if side < 5 || side % 2 == 0 {
        return Err(MazeError::BadAscii(format!("bad height {side}")));
    }
    let n = (side - 1) / 2;
    let grid: Vec<Vec<char>> = rows.iter().map(|r| r.chars().collect()).collect();
    if grid.iter().any(|r| r.len() != side) {
        return Err(MazeError::BadAscii("grid is not square".into()));
    }
    let mut passages = BTreeSet::new();
    let mut start = None;
    let mut goal = None;
    for r in 0..n {
        for c in 0..n {
            match grid[2 * r + 1][2 * c + 1] {
                'S' => start = Some((r, c)),
                'E' => goal = Some((r, c)),
                '.' => {}
                ch => return Err(MazeError::BadAscii(format!("bad cell char {ch:?}"))),
            }
            if c + 1 < n && grid[2 * r + 1][2 * c + 2] == '.' {
                passages.insert(edge((r, c), (r, c + 1)));
            }
            if r + 1 < n && grid[2 * r + 2][2 * c + 1] == '.' {
                passages.insert(edge((r, c), (r + 1, c)));
            }
        }
    }
    Ok(Maze {
        cells_n: n,
        passages,
        start: start.ok_or_else(|| MazeError::BadAscii("missing start".into()))?,
        goal: goal.ok_or_else(|| MazeError::BadAscii("missing goal".into()))?,
    })
}

/// Simulate a move string. Whitespace is stripped and letters uppercased;
/// any other character, a wall crossing, or leaving the grid fails. Success
/// means the final cell is the goal, so walking through the goal and past it
/// does not count.
pub fn verify_moves(maze: &Maze, moves: &str) -> bool {
    let mut cur = maze.start;
    let n = maze.cells_n;
    for ch in moves.chars() {
        if ch.is_whitespace() {
            continue;
        }
        let (dr, dc) = match ch.to_ascii_uppercase() {
            'U' => (-1isize, 0isize),
            'D' => (1, 0),
            'L' => (0, -1),
            'R' => (0, 1),
            _ => return false,
        };
        let nr = cur.0 as isize + dr;
        let nc = cur.1 as isize + dc;
        if nr < 0 || nc < 0 || nr as usize >= n || nc as usize >= n {
            return false;
        }
        let next = (nr as usize, nc as usize);
        if !maze.has_passage(cur, next) {
            return false;
        }
        cur = next;
    }
    cur == maze.goal
}

/// Extract the content of the last well-formed answer-tag pair.
pub fn parse_answer_tags(text: &str) -> Option<String> {
    let open = "<answer>";
    let close = "</answer>";
    let mut result = None;
    let mut from = 0;
    while let Some(s) = text[from..].find(open) {
        let content_start = from + s + open.len();
        match text[content_start..].find(close) {
            Some(e) => {
                result = Some(text[content_start..content_start + e].to_string());
                from = content_start + e + close.len();
            }
            None => break,
        }
    }
    result
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MazeRecord {
    pub id: String,
    pub cells_n: usize,
    pub ascii: String,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub seed: u64,
}

/// Write one JSON-lines file per split; per-record seeds are disjoint
/// across splits.
pub fn export_dataset(
    cells_n: usize,
    train_count: usize,
    test_count: usize,
    base_seed: u64,
    dir: &Path,
) -> Result<(), MazeError> {
    let io_err = |path: &Path, source: std::io::Error| MazeError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut offset = 0u64;
    for (split, count) in [("train", train_count), ("test", test_count)] {
        let path = dir.join(format!("{split}.jsonl"));
        let mut file = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        for i in 0..count {
            let seed = base_seed.wrapping_add(offset + i as u64);
            let spec = MazeSpec { cells_n, seed };
            let mut endpoint_rng = StdRng::seed_from_u64(seed ^ 0x5eed_0f0f);
            let maze = generate_maze(&spec, &mut endpoint_rng)?;
            let record = MazeRecord {
                id: format!("{split}-{i:05}"),
                cells_n,
                ascii: render_ascii(&maze),
                start: maze.start,
                goal: maze.goal,
                seed,
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| io_err(&path, e))?;
        }
        offset += count as u64;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maze(n: usize, seed: u64) -> Maze {
        let mut rng = StdRng::seed_from_u64(seed ^ 0xabcd);
        generate_maze(&MazeSpec { cells_n: n, seed }, &mut rng).unwrap()
    }

    /// Hand-built 2x2 maze: passages (0,0)-(1,0), (1,0)-(1,1), (1,1)-(0,1).
    fn corridor() -> Maze {
        let mut passages = BTreeSet::new();
        passages.insert(edge((0, 0), (1, 0)));
        passages.insert(edge((1, 0), (1, 1)));
        passages.insert(edge((0, 1), (1, 1)));
        Maze {
            cells_n: 2,
            passages,
            start: (1, 0),
            goal: (0, 0),
        }
    }

    #[test]
    fn spanning_tree_edge_counts() {
        assert_eq!(maze(2, 0).passages.len(), 3);
        assert_eq!(maze(4, 1).passages.len(), 15);
        for seed in 0..100 {
            for n in [2, 4, 5] {
                assert_eq!(maze(n, seed).passages.len(), n * n - 1, "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn unique_paths_by_double_bfs() {
        // Connectivity plus the tree edge count gives uniqueness; confirm
        // connectivity explicitly by BFS from both endpoints.
        for seed in 0..50 {
            let m = maze(4, seed);
            for origin in [m.start, m.goal] {
                let mut seen = BTreeSet::new();
                let mut stack = vec![origin];
                seen.insert(origin);
                while let Some(c) = stack.pop() {
                    for nb in m.neighbors(c) {
                        if m.has_passage(c, nb) && seen.insert(nb) {
                            stack.push(nb);
                        }
                    }
                }
                assert_eq!(seen.len(), 16, "seed {seed}");
            }
            assert_eq!(m.passages.len(), 15);
        }
    }

    #[test]
    fn carving_is_deterministic() {
        let a = maze(5, 77);
        let b = maze(5, 77);
        assert_eq!(a.passages, b.passages);
    }

    #[test]
    fn ascii_dimensions_and_border() {
        let m = maze(4, 3);
        let text = render_ascii(&m);
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.chars().count() == 9));
        for r in &rows {
            assert!(r.starts_with('*') && r.ends_with('*'));
        }
        assert!(rows[0].chars().all(|c| c == '*'));
        assert!(rows[8].chars().all(|c| c == '*'));
        let allowed: BTreeSet<char> = "*.SE".chars().collect();
        assert!(text.chars().filter(|c| *c != '\n').all(|c| allowed.contains(&c)));
    }

    #[test]
    fn render_parse_roundtrip() {
        for seed in 0..20 {
            let m = maze(5, seed);
            let back = parse_ascii(&render_ascii(&m)).unwrap();
            assert_eq!(m, back);
        }
    }

    #[test]
    fn single_move_to_adjacent_goal() {
        let m = corridor();
        assert!(verify_moves(&m, "U"));
        assert!(verify_moves(&m, " u "));
        assert!(!verify_moves(&m, ""));
        // Passing through the goal and continuing is not success.
        assert!(!verify_moves(&m, "UD"));
        assert!(!verify_moves(&m, "UXU"));
    }

    #[test]
    fn walls_and_grid_edges_fail() {
        let m = corridor();
        // (1,0) -> (0,0) is open upward, but left exits the grid.
        assert!(!verify_moves(&m, "L"));
        // (0,0) -> (0,1) is a wall in this maze.
        assert!(!verify_moves(&m, "UR"));
    }

    #[test]
    fn solver_witness_property() {
        for seed in 0..100 {
            for n in [2, 4, 5] {
                let m = maze(n, seed);
                assert!(verify_moves(&m, &m.bfs_solution()), "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn verify_agrees_with_brute_force_simulation() {
        let m = maze(4, 9);
        let alphabet = ['U', 'D', 'L', 'R'];
        let mut checked = 0usize;
        for len in [6usize] {
            for code in 0..4usize.pow(len as u32) {
                let mut s = String::new();
                let mut c = code;
                for _ in 0..len {
                    s.push(alphabet[c % 4]);
                    c /= 4;
                }
                // Independent simulation straight off the ASCII grid.
                let ascii: Vec<Vec<char>> =
                    render_ascii(&m).lines().map(|r| r.chars().collect()).collect();
                let expected = {
                    let mut pos = (2 * m.start.0 + 1, 2 * m.start.1 + 1);
                    let mut ok = true;
                    for ch in s.chars() {
                        let (dr, dc) = match ch {
                            'U' => (-1isize, 0isize),
                            'D' => (1, 0),
                            'L' => (0, -1),
                            _ => (0, 1),
                        };
                        let wall = (pos.0 as isize + dr, pos.1 as isize + dc);
                        let dest = (pos.0 as isize + 2 * dr, pos.1 as isize + 2 * dc);
                        if dest.0 < 0 || dest.1 < 0 || dest.0 >= 9 || dest.1 >= 9 {
                            ok = false;
                            break;
                        }
                        if ascii[wall.0 as usize][wall.1 as usize] == '*' {
                            ok = false;
                            break;
                        }
                        pos = (dest.0 as usize, dest.1 as usize);
                    }
                    ok && ascii[pos.0][pos.1] == 'E'
                };
                assert_eq!(verify_moves(&m, &s), expected, "moves {s}");
                checked += 1;
            }
        }
        assert_eq!(checked, 4096);
    }

    #[test]
    fn answer_tag_extraction() {
        assert_eq!(parse_answer_tags("<answer>UU</answer>").as_deref(), Some("UU"));
        assert_eq!(parse_answer_tags("no tags"), None);
        assert_eq!(
            parse_answer_tags("<answer>L</answer> text <answer>R</answer>").as_deref(),
            Some("R")
        );
        assert_eq!(parse_answer_tags("<answer>unclosed"), None);
        assert_eq!(
            parse_answer_tags("<answer>A</answer><answer>broken").as_deref(),
            Some("A")
        );
    }

    #[test]
    fn dataset_export_shape_and_quality() {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(4, 10, 2, 42, dir.path()).unwrap();
        let train = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
        let test = std::fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
        assert_eq!(train.lines().count(), 10);
        assert_eq!(test.lines().count(), 2);
        let mut seen = BTreeSet::new();
        for line in train.lines().chain(test.lines()) {
            let rec: MazeRecord = serde_json::from_str(line).unwrap();
            let m = parse_ascii(&rec.ascii).unwrap();
            assert_eq!(m.passages.len(), rec.cells_n * rec.cells_n - 1);
            assert_eq!((m.start, m.goal), (rec.start, rec.goal));
            assert!(verify_moves(&m, &m.bfs_solution()));
            seen.insert(rec.ascii);
        }
        assert_eq!(seen.len(), 12, "wall sets should not collide across splits");
    }

    #[test]
    fn export_is_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        export_dataset(5, 6, 3, 7, d1.path()).unwrap();
        export_dataset(5, 6, 3, 7, d2.path()).unwrap();
        for split in ["train.jsonl", "test.jsonl"] {
            let a = std::fs::read(d1.path().join(split)).unwrap();
            let b = std::fs::read(d2.path().join(split)).unwrap();
            assert_eq!(a, b);
        }
    }
}
