/** Grasp overlay rendering.
 *
 * A grasp is an oriented rectangle (center, size, angle in degrees,
 * counter-clockwise). Corner layout matches the backend geometry exactly so
 * the overlay draws where the model means: local corners ordered
 * counter-clockwise from (-w/2, -h/2), rotated, then translated.
 */

export interface Grasp {
  x: number;
  y: number;
  w: number;
  h: number;
  theta: number;
  score: number;
}

/** Four [x, y] corners, counter-clockwise, matching the backend layout. */
export function rectCorners(x: number, y: number, w: number, h: number, theta: number): number[][] {
  const rad = (theta * Math.PI) / 180;
  const c = Math.cos(rad);
  const s = Math.sin(rad);
  const hw = w / 2;
  const hh = h / 2;
  const local = [
    [-hw, -hh],
    [hw, -hh],
    [hw, hh],
    [-hw, hh],
  ];
  return local.map(([px, py]) => [x + px * c - py * s, y + px * s + py * c]);
}

/** Color for the grasp at a given rank (0 = best). Top ranks get fixed,
 * well-separated hues; deeper ranks walk the hue wheel. */
export function rankColor(rank: number): string {
  const fixed = ["#2ecc71", "#f1c40f", "#e67e22", "#9b59b6", "#3498db"];
  if (rank < fixed.length) return fixed[rank];
  return `hsl(${(rank * 47) % 360}, 70%, 55%)`;
}

/** Draw ranked grasps onto a 2D context: outline, jaw edges emphasized,
 * and a score tag at the first corner. */
export function drawGrasps(ctx: CanvasRenderingContext2D, grasps: readonly Grasp[]): void {
  grasps.forEach((g, rank) => {
    const corners = rectCorners(g.x, g.y, g.w, g.h, g.theta);
    const color = rankColor(rank);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(corners[0][0], corners[0][1]);
    for (let i = 1; i < 4; i += 1) ctx.lineTo(corners[i][0], corners[i][1]);
    ctx.closePath();
    ctx.stroke();

    ctx.fillStyle = color;
    ctx.font = "12px sans-serif";
    ctx.fillText(`#${rank + 1} ${g.score.toFixed(2)}`, corners[0][0] + 3, corners[0][1] - 3);
  });
}
