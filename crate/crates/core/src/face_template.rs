//! Fixed 68-point mean face used to seed the synthetic shape corpus.
//!
//! Units are pixel-like (about 140 wide), image convention (y grows downward,
//! z toward the viewer). Indices follow the iBUG 68-point layout.

pub(crate) const MEAN_FACE_TEMPLATE: [[f64; 3]; 68] = [
    [-70.00, -19.20, -44.62], // 0
    [-68.65, -7.27, -36.82], // 1
    [-64.67, 4.42, -29.32], // 2
    [-58.20, 17.07, -22.40], // 3
    [-49.50, 29.62, -16.34], // 4
    [-38.89, 40.96, -11.37], // 5
    [-26.79, 49.99, -7.67], // 6
    [-13.66, 55.80, -5.39], // 7
    [-0.00, 57.80, -4.62], // 8
    [13.66, 55.80, -5.39], // 9
    [26.79, 49.99, -7.67], // 10
    [38.89, 40.96, -11.37], // 11
    [49.50, 29.62, -16.34], // 12
    [58.20, 17.07, -22.40], // 13
    [64.67, 4.42, -29.32], // 14
    [68.65, -7.27, -36.82], // 15
    [70.00, -19.20, -44.62], // 16
    [-58.00, -49.20, 2.38], // 17
    [-47.00, -54.85, 6.62], // 18
    [-36.00, -57.20, 8.38], // 19
    [-25.00, -54.85, 6.62], // 20
    [-14.00, -49.20, 2.38], // 21
    [14.00, -49.20, 2.38], // 22
    [25.00, -54.85, 6.62], // 23
    [36.00, -57.20, 8.38], // 24
    [47.00, -54.85, 6.62], // 25
    [58.00, -49.20, 2.38], // 26
    [0.00, -35.20, 8.38], // 27
    [0.00, -24.20, 15.38], // 28
    [0.00, -13.20, 22.38], // 29
    [0.00, -2.20, 29.38], // 30
    [-13.00, 2.80, 10.58], // 31
    [-7.00, 4.80, 14.18], // 32
    [0.00, 6.80, 18.38], // 33
    [7.00, 4.80, 14.18], // 34
    [13.00, 2.80, 10.58], // 35
    [-47.00, -33.20, 0.38], // 36
    [-42.90, -36.73, -1.04], // 37
    [-23.10, -36.73, -1.04], // 38
    [-19.00, -33.20, 0.38], // 39
    [-23.10, -29.66, -1.04], // 40
    [-42.90, -29.66, -1.04], // 41
    [19.00, -33.20, 0.38], // 42
    [23.10, -36.73, -1.04], // 43
    [42.90, -36.73, -1.04], // 44
    [47.00, -33.20, 0.38], // 45
    [42.90, -29.66, -1.04], // 46
    [23.10, -29.66, -1.04], // 47
    [-25.00, 28.80, 3.63], // 48
    [-16.00, 22.80, 6.78], // 49
    [-6.00, 19.80, 10.28], // 50
    [0.00, 20.80, 12.38], // 51
    [6.00, 19.80, 10.28], // 52
    [16.00, 22.80, 6.78], // 53
    [25.00, 28.80, 3.63], // 54
    [17.00, 35.80, 6.43], // 55
    [8.00, 38.80, 9.58], // 56
    [0.00, 39.80, 12.38], // 57
    [-8.00, 38.80, 9.58], // 58
    [-17.00, 35.80, 6.43], // 59
    [-21.00, 28.80, 4.03], // 60
    [-8.00, 25.80, 8.58], // 61
    [0.00, 26.30, 11.38], // 62
    [8.00, 25.80, 8.58], // 63
    [21.00, 28.80, 4.03], // 64
    [8.00, 30.80, 8.58], // 65
    [0.00, 31.30, 11.38], // 66
    [-8.00, 30.80, 8.58], // 67
];
