import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";
import { ClassDef, MeshData } from "./types.js";

const BACKGROUND_COLOR = new THREE.Color("#b8bcc4");

/**
 * Mesh viewer with orbit/zoom camera and raycast surface picking.
 *
 * Rendering is read-only with respect to labels: the viewer owns a color
 * buffer that callers refresh after the session mutates labels. While
 * paint mode is on, orbit controls are disabled so camera gestures can
 * never paint and paint gestures never move the camera.
 */
export class MeshViewer {
  readonly renderer: THREE.WebGLRenderer;
  readonly canvas: HTMLCanvasElement;

  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly controls: OrbitControls;
  private readonly raycaster = new THREE.Raycaster();
  private readonly mesh: THREE.Mesh;
  private readonly colors: Float32Array;
  private readonly classColors: Map<number, THREE.Color>;
  private paintMode = false;

  /** Fired with the surface hit point for every paint gesture sample. */
  onPaint: ((hit: [number, number, number]) => void) | null = null;
  private pointerDown = false;

  constructor(container: HTMLElement, data: MeshData, classes: ClassDef[]) {
    this.classColors = new Map(
      classes.map((c) => [c.id, new THREE.Color(c.color)]),
    );

    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(data.positions, 3));
    geometry.setIndex(new THREE.BufferAttribute(data.indices, 1));
    geometry.computeVertexNormals();
    this.colors = new Float32Array(data.vertexCount * 3);
    geometry.setAttribute("color", new THREE.BufferAttribute(this.colors, 3));

    const material = new THREE.MeshLambertMaterial({
      vertexColors: true,
      side: THREE.DoubleSide,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
    this.scene.background = new THREE.Color("#1d2026");
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const key = new THREE.DirectionalLight(0xffffff, 1.4);
    key.position.set(1, 1, 1);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0xffffff, 0.6);
    fill.position.set(-1, -0.5, -1);
    this.scene.add(fill);

    geometry.computeBoundingSphere();
    const sphere = geometry.boundingSphere!;
    this.camera = new THREE.PerspectiveCamera(45, 1, sphere.radius / 100,
                                              sphere.radius * 100);
    this.camera.position.copy(sphere.center)
      .add(new THREE.Vector3(0, 0, sphere.radius * 3));

    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.canvas = this.renderer.domElement;
    container.appendChild(this.canvas);

    this.controls = new OrbitControls(this.camera, this.canvas);
    this.controls.target.copy(sphere.center);
    this.controls.update();

    this.canvas.addEventListener("pointerdown", (e) => {
      if (!this.paintMode) return;
      this.pointerDown = true;
      this.emitHit(e);
    });
    this.canvas.addEventListener("pointermove", (e) => {
      if (this.paintMode && this.pointerDown) this.emitHit(e);
    });
    window.addEventListener("pointerup", () => {
      this.pointerDown = false;
    });

    const resize = () => {
      const w = container.clientWidth;
      const h = container.clientHeight;
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / Math.max(h, 1);
      this.camera.updateProjectionMatrix();
    };
    window.addEventListener("resize", resize);
    resize();

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  setPaintMode(on: boolean): void {
    this.paintMode = on;
    this.controls.enabled = !on;
    this.canvas.style.cursor = on ? "crosshair" : "grab";
  }

  /** Repaint the whole vertex-color buffer from a label array. */
  refreshColors(labels: Int32Array): void {
    for (let i = 0; i < labels.length; i++) this.colorVertex(i, labels[i]);
    (this.mesh.geometry.getAttribute("color") as THREE.BufferAttribute)
      .needsUpdate = true;
  }

  /** Cheaper partial update after a stroke or undo/redo. */
  updateColors(indices: Int32Array, labels: Int32Array): void {
    indices.forEach((v) => this.colorVertex(v, labels[v]));
    (this.mesh.geometry.getAttribute("color") as THREE.BufferAttribute)
      .needsUpdate = true;
  }

  private colorVertex(i: number, classId: number): void {
    const c = this.classColors.get(classId) ?? BACKGROUND_COLOR;
    this.colors[3 * i] = c.r;
    this.colors[3 * i + 1] = c.g;
    this.colors[3 * i + 2] = c.b;
  }

  private emitHit(event: PointerEvent): void {
    if (!this.onPaint) return;
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((event.clientX - rect.left) / rect.width) * 2 - 1,
      -(((event.clientY - rect.top) / rect.height) * 2 - 1),
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const hits = this.raycaster.intersectObject(this.mesh, false);
    if (hits.length === 0) return; // off-mesh pointer is a no-op
    const p = hits[0].point;
    this.onPaint([p.x, p.y, p.z]);
  }
}
